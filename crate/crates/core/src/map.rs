//! Discrete maps `f: M → N`, sections of `f*TN`, and the first-order
//! quantities built from them: tension field, Dirichlet energy and the `L²`
//! pairing.
//!
//! The energy is the edge quadrature
//! `E(f) = ½ Σ_i g^{ii} Σ_{edges e along i} W_e h_{f(m_e)}(δ_e f, δ_e f)`
//! with `δ_e f` the forward difference quotient and `m_e` the chart midpoint.
//! The tension field is its metric gradient, `τ_j = −(w_j h(f_j))⁻¹ ∂E/∂f_j`,
//! which is the divergence-form discretization of
//! `τ^γ = g^{ij}(∂_i∂_j f^γ + Γ^γ_{αβ}(f) ∂_i f^α ∂_j f^β)`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::TargetManifold;
use crate::grid::DomainGrid;

/// Chart coordinates of a map sampled at grid nodes (node-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMap {
    grid: Arc<DomainGrid>,
    target: TargetManifold,
    values: Vec<f64>,
}

impl DiscreteMap {
    pub fn from_values(grid: DomainGrid, target: TargetManifold, values: Vec<f64>) -> Result<Self> {
        target.validate()?;
        let n = target.dim();
        let expected = grid.node_count() * n;
        if values.len() != expected {
            return Err(Error::ShapeMismatch { expected, got: values.len() });
        }
        for node in values.chunks_exact(n) {
            target.check_admissible(node)?;
        }
        Ok(Self { grid: Arc::new(grid), target, values })
    }

    /// Samples `f` at every node. On periodic grids `f(x + L_i e_i)` must
    /// agree with `f(x)` (modulo the lattice for torus targets).
    pub fn from_fn<F>(grid: DomainGrid, target: TargetManifold, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let n = target.dim();
        let mut values = Vec::with_capacity(grid.node_count() * n);
        for idx in 0..grid.node_count() {
            let y = f(&grid.coordinates(idx));
            if y.len() != n {
                return Err(Error::ShapeMismatch { expected: n, got: y.len() });
            }
            values.extend_from_slice(&y);
        }
        if grid.is_periodic() {
            for idx in 0..grid.node_count() {
                let m = grid.multi_index(idx);
                for axis in 0..grid.dim() {
                    if m[axis] != 0 {
                        continue;
                    }
                    let mut x = grid.coordinates(idx);
                    x[axis] += grid.axis(axis).length;
                    let shifted = f(&x);
                    for (c, (a, b)) in values[idx * n..(idx + 1) * n].iter().zip(&shifted).enumerate() {
                        let gap = target.chart_delta(*a, *b).abs();
                        if gap > 1e-9 * (1.0 + a.abs()) {
                            return Err(Error::InvalidMap(format!(
                                "component {c} is not periodic along axis {axis} (mismatch {gap:e})"
                            )));
                        }
                    }
                }
            }
        }
        Self::from_values(grid, target, values)
    }

    pub fn constant(grid: DomainGrid, target: TargetManifold, value: &[f64]) -> Result<Self> {
        let values = value.iter().copied().cycle().take(grid.node_count() * value.len()).collect();
        if value.len() != target.dim() {
            return Err(Error::ShapeMismatch { expected: target.dim(), got: value.len() });
        }
        Self::from_values(grid, target, values)
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn target(&self) -> &TargetManifold {
        &self.target
    }

    /// Target dimension.
    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> &[f64] {
        let n = self.dim();
        &self.values[node * n..(node + 1) * n]
    }

    /// Same grid and target with new values; Dirichlet boundary values must
    /// be unchanged.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let n = self.dim();
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch { expected: self.values.len(), got: values.len() });
        }
        for idx in 0..self.node_count() {
            let range = idx * n..(idx + 1) * n;
            if self.grid.is_boundary(idx) && values[range.clone()] != self.values[range.clone()] {
                return Err(Error::InvalidMap(format!("boundary node {idx} was modified")));
            }
            self.target.check_admissible(&values[range])?;
        }
        Ok(Self { grid: Arc::clone(&self.grid), target: self.target, values })
    }

    /// First and second chart derivatives with the grid stencils
    /// (torus differences taken on the nearest lift).
    pub(crate) fn jet(&self) -> MapJet {
        let n = self.dim();
        let nodes = self.node_count();
        let m = self.grid.dim();
        let mut d1 = vec![0.0; m * nodes * n];
        let mut d2 = vec![0.0; m * nodes * n];
        let v = &self.values;
        for axis in 0..m {
            for idx in 0..nodes {
                for c in 0..n {
                    let rel = |k: usize| self.target.chart_delta(v[idx * n + c], v[k * n + c]);
                    d1[(axis * nodes + idx) * n + c] = self.grid.first_diff_at(idx, axis, rel);
                    d2[(axis * nodes + idx) * n + c] = self.grid.second_diff_at(idx, axis, rel);
                }
            }
        }
        MapJet { n, nodes, d1, d2 }
    }

    /// Writes a CSV with one row per node: `node, x0[, x1], y0, …`.
    /// `comments` are emitted first as `# ` lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> std::io::Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut header = vec!["node".to_string()];
        header.extend((0..self.grid.dim()).map(|i| format!("x{i}")));
        header.extend((0..self.dim()).map(|a| format!("y{a}")));
        writeln!(out, "{}", header.join(","))?;
        for idx in 0..self.node_count() {
            let mut row = vec![idx.to_string()];
            row.extend(self.grid.coordinates(idx).iter().map(|x| x.to_string()));
            row.extend(self.value(idx).iter().map(|y| y.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads a CSV written by [`DiscreteMap::write_csv`]; comment lines are
    /// returned alongside the map.
    pub fn read_csv<R: BufRead>(input: R, grid: DomainGrid, target: TargetManifold) -> Result<(Self, Vec<String>)> {
        let n = target.dim();
        let m = grid.dim();
        let mut comments = Vec::new();
        let mut values = vec![f64::NAN; grid.node_count() * n];
        let mut seen_header = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidMap(format!("read error: {e}")))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim().to_string());
                continue;
            }
            if !seen_header {
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + m + n {
                return Err(Error::InvalidMap(format!("line {}: expected {} columns", lineno + 1, 1 + m + n)));
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::InvalidMap(format!("line {}: {e}", lineno + 1)))
            };
            let idx: usize = fields[0]
                .trim()
                .parse()
                .map_err(|e| Error::InvalidMap(format!("line {}: {e}", lineno + 1)))?;
            if idx >= grid.node_count() {
                return Err(Error::InvalidMap(format!("line {}: node {idx} out of range", lineno + 1)));
            }
            for a in 0..n {
                values[idx * n + a] = parse(fields[1 + m + a])?;
            }
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidMap("snapshot does not cover every node".into()));
        }
        Ok((Self::from_values(grid, target, values)?, comments))
    }
}

/// Per-node first and second derivatives, indexed `[(axis * nodes + node) * n + comp]`.
pub(crate) struct MapJet {
    n: usize,
    nodes: usize,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl MapJet {
    #[inline]
    pub(crate) fn first(&self, axis: usize, node: usize) -> &[f64] {
        let start = (axis * self.nodes + node) * self.n;
        &self.d1[start..start + self.n]
    }

    #[inline]
    pub(crate) fn second(&self, axis: usize, node: usize) -> &[f64] {
        let start = (axis * self.nodes + node) * self.n;
        &self.d2[start..start + self.n]
    }
}

/// A section of `f*TN`: chart-frame coefficients per node.
#[derive(Debug, Clone)]
pub struct Section {
    base: Arc<DiscreteMap>,
    coeffs: Vec<f64>,
}

impl Section {
    pub fn new(base: Arc<DiscreteMap>, coeffs: Vec<f64>) -> Result<Self> {
        let expected = base.values.len();
        if coeffs.len() != expected {
            return Err(Error::ShapeMismatch { expected, got: coeffs.len() });
        }
        let n = base.dim();
        for idx in 0..base.node_count() {
            if base.grid.is_boundary(idx) && coeffs[idx * n..(idx + 1) * n].iter().any(|c| *c != 0.0) {
                return Err(Error::InvalidMap(format!("section is non-zero on boundary node {idx}")));
            }
        }
        Ok(Self { base, coeffs })
    }

    pub fn zeros(base: Arc<DiscreteMap>) -> Self {
        let coeffs = vec![0.0; base.values.len()];
        Self { base, coeffs }
    }

    pub fn base(&self) -> &Arc<DiscreteMap> {
        &self.base
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let n = self.base.dim();
        &self.coeffs[node * n..(node + 1) * n]
    }

    fn same_base(&self, other: &Section) -> bool {
        self.same_base_as(&other.base)
    }

    pub(crate) fn same_base_as(&self, base: &Arc<DiscreteMap>) -> bool {
        Arc::ptr_eq(&self.base, base) || *self.base == **base
    }
}

/// Accumulates `∂E/∂f` into `grad` and returns `E`.
fn energy_and_gradient(f: &DiscreteMap, mut grad: Option<&mut [f64]>) -> f64 {
    let n = f.dim();
    let target = &f.target;
    let grid = &f.grid;
    let last = n - 1;
    let mut energy = 0.0;
    let mut d = vec![0.0; n];
    let mut mid = vec![0.0; n];
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let g = grid.inverse_metric(axis);
        for &(a, b, weight) in grid.edges(axis) {
            let fa = f.value(a);
            let fb = f.value(b);
            for c in 0..n {
                let delta = target.chart_delta(fa[c], fb[c]);
                d[c] = delta / h;
                mid[c] = fa[c] + 0.5 * delta;
            }
            let phi = target.conformal_factor(&mid);
            let dd: f64 = d.iter().map(|x| x * x).sum();
            energy += 0.5 * g * weight * phi * dd;
            if let Some(grad) = grad.as_deref_mut() {
                let dphi = target.conformal_factor_last_derivative(&mid);
                for c in 0..n {
                    let stretch = g * weight * phi * d[c] / h;
                    grad[a * n + c] -= stretch;
                    grad[b * n + c] += stretch;
                }
                let bend = 0.25 * g * weight * dphi * dd;
                grad[a * n + last] += bend;
                grad[b * n + last] += bend;
            }
        }
    }
    energy
}

/// Dirichlet energy `½ ∫ |df|²`.
pub fn energy(f: &DiscreteMap) -> f64 {
    energy_and_gradient(f, None)
}

/// Tension field coefficients per node (zero on Dirichlet boundary nodes).
pub fn tension_values(f: &DiscreteMap) -> Vec<f64> {
    let n = f.dim();
    let mut grad = vec![0.0; f.values.len()];
    energy_and_gradient(f, Some(&mut grad));
    let weights = f.grid.weights();
    for idx in 0..f.node_count() {
        let slot = &mut grad[idx * n..(idx + 1) * n];
        if weights[idx] == 0.0 {
            slot.iter_mut().for_each(|v| *v = 0.0);
        } else {
            let scale = -1.0 / (weights[idx] * f.target.conformal_factor(f.value(idx)));
            slot.iter_mut().for_each(|v| *v *= scale);
        }
    }
    grad
}

/// Tension field `τ(f)` as a section over `f`.
pub fn tension(f: &Arc<DiscreteMap>) -> Section {
    Section { base: Arc::clone(f), coeffs: tension_values(f) }
}

/// Pointwise coordinate formula `g^{ii}(∂_i∂_i f + Γ(f)(∂_i f, ∂_i f))` with the
/// central and three-point stencils; agrees with [`tension_values`] to `O(h²)`.
pub fn tension_coordinate(f: &DiscreteMap) -> Vec<f64> {
    let n = f.dim();
    let jet = f.jet();
    let mut out = vec![0.0; f.values.len()];
    let mut gam = vec![0.0; n];
    for idx in 0..f.node_count() {
        if f.grid.is_boundary(idx) {
            continue;
        }
        let y = f.value(idx);
        for axis in 0..f.grid.dim() {
            let g = f.grid.inverse_metric(axis);
            let d1 = jet.first(axis, idx);
            f.target.connection_unchecked(y, d1, d1, &mut gam);
            for (c, d2) in jet.second(axis, idx).iter().enumerate() {
                out[idx * n + c] += g * (d2 + gam[c]);
            }
        }
    }
    out
}

/// Weighted fiber pairing `Σ_x w(x) h_{f(x)}(a(x), b(x))` of raw coefficient arrays.
pub(crate) fn pairing(f: &DiscreteMap, weights: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = f.dim();
    let mut acc = 0.0;
    for (idx, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let range = idx * n..(idx + 1) * n;
        acc += w * f.target.inner_unchecked(f.value(idx), &a[range.clone()], &b[range]);
    }
    acc
}

/// `L²` inner product of sections over the same base map.
pub fn l2_inner(s: &Section, t: &Section) -> Result<f64> {
    if !s.same_base(t) {
        return Err(Error::BaseMismatch);
    }
    Ok(pairing(&s.base, s.base.grid.weights(), &s.coeffs, &t.coeffs))
}

pub fn l2_norm(s: &Section) -> f64 {
    pairing(&s.base, s.base.grid.weights(), &s.coeffs, &s.coeffs).max(0.0).sqrt()
}

/// `‖τ(f)‖_{L²}` without building a section.
pub fn tension_norm(f: &DiscreteMap) -> f64 {
    let tau = tension_values(f);
    pairing(f, f.grid.weights(), &tau, &tau).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn circle(n: usize) -> DomainGrid {
        DomainGrid::circle(2.0 * PI, n).unwrap()
    }

    /// Constant-speed geodesic samples generated by `exp_map`.
    fn geodesic(n: usize, v: [f64; 2]) -> DiscreteMap {
        let t = TargetManifold::hyperbolic(2, 1.0);
        DiscreteMap::from_fn(DomainGrid::interval(1.0, n).unwrap(), t, |x| t.exp_map(&[0.0, 1.0], &v, x[0]).unwrap())
            .unwrap()
    }

    fn vertical_geodesic(n: usize, ell: f64) -> DiscreteMap {
        geodesic(n, [0.0, ell])
    }

    #[test]
    fn flat_tension_is_second_derivative() {
        let f = DiscreteMap::from_fn(circle(256), TargetManifold::euclidean(1), |x| vec![x[0].sin()]).unwrap();
        let tau = tension_values(&f);
        let h = f.grid().spacing(0);
        for idx in 0..256 {
            let x = f.grid().coordinates(idx)[0];
            assert!((tau[idx] + x.sin()).abs() <= h * h / 12.0 * 1.01);
        }
    }

    #[test]
    fn constant_maps_have_no_tension_or_energy() {
        for t in [TargetManifold::hyperbolic(2, 2.0), TargetManifold::euclidean(3), TargetManifold::flat_torus(2)] {
            let value = vec![0.5; t.dim()];
            let f = Arc::new(DiscreteMap::constant(DomainGrid::torus2([1.0, 1.0], [5, 6]).unwrap(), t, &value).unwrap());
            assert!(tension(&f).coeffs().iter().all(|v| *v == 0.0));
            assert_eq!(energy(&f), 0.0);
        }
    }

    #[test]
    fn geodesic_tension_vanishes_at_second_order() {
        let max_tau = |n: usize| tension_values(&geodesic(n, [1.2, 0.5])).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (coarse, fine) = (max_tau(51), max_tau(101));
        let h = 1.0 / 50.0;
        assert!(coarse <= 2.0 * h * h, "coarse {coarse}");
        assert!((3.5..4.5).contains(&(coarse / fine)), "ratio {}", coarse / fine);
    }

    #[test]
    fn divergence_and_coordinate_forms_agree_to_second_order() {
        let t = TargetManifold::hyperbolic(2, 1.0);
        let build = |n: usize| {
            DiscreteMap::from_fn(DomainGrid::interval(1.0, n).unwrap(), t, |x| {
                vec![-1.0 + 2.0 * x[0] + 0.1 * (PI * x[0]).sin(), 1.0 + 0.2 * (2.0 * PI * x[0]).sin()]
            })
            .unwrap()
        };
        let gap = |n: usize| {
            let f = build(n);
            let a = tension_values(&f);
            let b = tension_coordinate(&f);
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let (g1, g2) = (gap(41), gap(81));
        assert!(g1 < 0.05, "gap {g1}");
        assert!((3.0..5.0).contains(&(g1 / g2)), "ratio {}", g1 / g2);
    }

    #[test]
    fn tension_is_minus_energy_gradient() {
        let t = TargetManifold::hyperbolic(2, 1.5);
        let f = DiscreteMap::from_fn(DomainGrid::interval(1.0, 9).unwrap(), t, |x| {
            vec![x[0].powi(2), 1.0 + 0.3 * (3.0 * x[0]).sin()]
        })
        .unwrap();
        let tau = tension_values(&f);
        let w = f.grid().volume_weights();
        let step = 1e-6;
        for idx in 1..8 {
            for c in 0..2 {
                let bump = |s: f64| {
                    let mut v = f.values().to_vec();
                    v[idx * 2 + c] += s;
                    energy(&f.with_values(v).unwrap())
                };
                let de = (bump(step) - bump(-step)) / (2.0 * step);
                let expected = -w[idx] * t.conformal_factor(f.value(idx)) * tau[idx * 2 + c];
                assert_abs_diff_eq!(de, expected, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn energy_of_unit_circle_loop() {
        let f = DiscreteMap::from_fn(circle(256), TargetManifold::euclidean(2), |x| vec![x[0].cos(), x[0].sin()])
            .unwrap();
        let h = 2.0 * PI / 256.0;
        assert!((energy(&f) - PI).abs() <= PI * h * h / 12.0 * 1.01);
    }

    #[test]
    fn non_periodic_samples_are_rejected() {
        let err = DiscreteMap::from_fn(circle(32), TargetManifold::euclidean(1), |x| vec![0.7 * x[0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidMap(_)));
        // A winding loop is periodic modulo the lattice of the torus.
        assert!(DiscreteMap::from_fn(circle(32), TargetManifold::flat_torus(1), |x| vec![x[0]]).is_ok());
    }

    #[test]
    fn winding_loop_energy_sees_the_lift() {
        let f = DiscreteMap::from_fn(circle(64), TargetManifold::flat_torus(2), |x| vec![x[0], 0.0]).unwrap();
        assert_abs_diff_eq!(energy(&f), PI, epsilon = 1e-12);
        assert!(tension_values(&f).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn l2_examples() {
        let f = Arc::new(DiscreteMap::constant(circle(256), TargetManifold::euclidean(1), &[0.0]).unwrap());
        let zero = Section::zeros(Arc::clone(&f));
        assert_eq!(l2_norm(&zero), 0.0);
        let coeffs = (0..256).map(|i| f.grid().coordinates(i)[0].sin()).collect();
        let s = Section::new(Arc::clone(&f), coeffs).unwrap();
        assert_abs_diff_eq!(l2_norm(&s).powi(2), PI, epsilon = 1e-10);

        let t = TargetManifold::hyperbolic(2, 1.0);
        let g = Arc::new(DiscreteMap::constant(DomainGrid::interval(1.0, 6).unwrap(), t, &[0.0, 2.0]).unwrap());
        let mut a = vec![0.0; 12];
        let mut b = vec![0.0; 12];
        a[2..4].copy_from_slice(&[1.0, 2.0]);
        b[6..8].copy_from_slice(&[3.0, -1.0]);
        let sa = Section::new(Arc::clone(&g), a).unwrap();
        let sb = Section::new(Arc::clone(&g), b).unwrap();
        assert_eq!(l2_inner(&sa, &sb).unwrap(), 0.0);
        assert!(Section::new(Arc::clone(&g), vec![1.0; 12]).is_err());

        let other = Arc::new(DiscreteMap::constant(DomainGrid::interval(1.0, 6).unwrap(), t, &[0.0, 3.0]).unwrap());
        assert_eq!(l2_inner(&sa, &Section::zeros(other)).unwrap_err(), Error::BaseMismatch);
    }

    #[test]
    fn boundary_values_are_immutable() {
        let f = vertical_geodesic(11, 1.0);
        let mut v = f.values().to_vec();
        v[0] += 0.1;
        assert!(matches!(f.with_values(v), Err(Error::InvalidMap(_))));
    }

    #[test]
    fn csv_round_trip() {
        let f = vertical_geodesic(11, 0.7);
        let mut buf = Vec::new();
        f.write_csv(&mut buf, &["seed=3".into()]).unwrap();
        let (back, comments) = DiscreteMap::read_csv(&buf[..], f.grid().clone(), *f.target()).unwrap();
        assert_eq!(back, f);
        assert_eq!(comments, vec!["seed=3".to_string()]);
    }

    proptest! {
        #[test]
        fn l2_is_symmetric_bilinear(
            a in proptest::collection::vec(-1.0..1.0f64, 20),
            b in proptest::collection::vec(-1.0..1.0f64, 20),
            c in proptest::collection::vec(-1.0..1.0f64, 20),
            k in -3.0..3.0f64,
        ) {
            let t = TargetManifold::hyperbolic(2, 1.0);
            let f = Arc::new(DiscreteMap::from_fn(circle(10), t, |x| vec![x[0].sin(), 1.5 + 0.5 * x[0].cos()]).unwrap());
            let sec = |v: Vec<f64>| Section::new(Arc::clone(&f), v).unwrap();
            let ab = l2_inner(&sec(a.clone()), &sec(b.clone())).unwrap();
            let ba = l2_inner(&sec(b.clone()), &sec(a.clone())).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-14 * (1.0 + ab.abs()));
            let combo: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x + k * y).collect();
            let lhs = l2_inner(&sec(combo), &sec(b.clone())).unwrap();
            let rhs = ab + k * l2_inner(&sec(c), &sec(b)).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            prop_assert!(l2_norm(&sec(a.clone())) > 0.0 || a.iter().all(|v| *v == 0.0));
        }

        #[test]
        fn energy_is_non_negative(coeffs in proptest::collection::vec(-0.5..0.5f64, 16)) {
            let t = TargetManifold::hyperbolic(2, 1.0);
            let values: Vec<f64> = coeffs.chunks(2).flat_map(|p| [p[0], 1.0 + p[1]]).collect();
            let f = DiscreteMap::from_values(circle(8), t, values).unwrap();
            prop_assert!(energy(&f) >= 0.0);
        }
    }
}
