use std::sync::Arc;

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::map::{DiscreteMap, Section};

/// Strong-form coefficients of `(J s)^γ = A^{ij,γ}_α ∂_i∂_j s^α + B^{i,γ}_α ∂_i s^α + C^γ_α s^α`,
/// stored per node as row-major `n × n` blocks (zero on boundary nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFields {
    nodes: usize,
    domain_dim: usize,
    n: usize,
    principal: Vec<f64>,
    first_order: Vec<f64>,
    zeroth_order: Vec<f64>,
    curvature: Vec<f64>,
}

impl CoefficientFields {
    fn zeros(nodes: usize, domain_dim: usize, n: usize) -> Self {
        let block = n * n;
        Self {
            nodes,
            domain_dim,
            n,
            principal: vec![0.0; nodes * domain_dim * domain_dim * block],
            first_order: vec![0.0; nodes * domain_dim * block],
            zeroth_order: vec![0.0; nodes * block],
            curvature: vec![0.0; nodes * block],
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn target_dim(&self) -> usize {
        self.n
    }

    /// `A^{ij}` at `node`.
    pub fn principal(&self, node: usize, i: usize, j: usize) -> &[f64] {
        let b = self.n * self.n;
        let start = ((node * self.domain_dim + i) * self.domain_dim + j) * b;
        &self.principal[start..start + b]
    }

    /// `B^{i}` at `node`.
    pub fn first_order(&self, node: usize, i: usize) -> &[f64] {
        let b = self.n * self.n;
        let start = (node * self.domain_dim + i) * b;
        &self.first_order[start..start + b]
    }

    /// `C` at `node`, curvature potential included.
    pub fn zeroth_order(&self, node: usize) -> &[f64] {
        let b = self.n * self.n;
        &self.zeroth_order[node * b..(node + 1) * b]
    }

    /// The part `−Σ_i g^{ii} R(·, ∂_i f)∂_i f` of `C` at `node`.
    pub fn curvature_potential(&self, node: usize) -> &[f64] {
        let b = self.n * self.n;
        &self.curvature[node * b..(node + 1) * b]
    }

    /// Largest entrywise difference over all fields.
    pub fn max_difference(&self, other: &Self) -> Result<f64> {
        if self.principal.len() != other.principal.len() || self.n != other.n {
            return Err(Error::ShapeMismatch { expected: self.principal.len(), got: other.principal.len() });
        }
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        Ok(diff(&self.principal, &other.principal)
            .max(diff(&self.first_order, &other.first_order))
            .max(diff(&self.zeroth_order, &other.zeroth_order)))
    }
}

/// Coefficients from the pullback connection `∇_i s = ∂_i s + Γ(f)(s, ∂_i f)`
/// expanded in `J s = −Σ_i g^{ii} ∇_i∇_i s − Σ_i g^{ii} R(s, ∂_i f)∂_i f`.
pub fn assemble_coefficients(f: &DiscreteMap) -> Result<CoefficientFields> {
    let grid = f.grid();
    let target = f.target();
    let n = f.dim();
    let m = grid.dim();
    let jet = f.jet();
    let mut out = CoefficientFields::zeros(f.node_count(), m, n);
    let bsz = n * n;
    for idx in 0..f.node_count() {
        let y = f.value(idx);
        let gam = target.christoffels_at(y)?;
        if grid.is_boundary(idx) {
            continue;
        }
        let dgam = target.christoffel_gradient_at(y)?;
        let curv = target.curvature_at(y)?;
        let c_block = &mut out.zeroth_order[idx * bsz..(idx + 1) * bsz];
        let r_block = &mut out.curvature[idx * bsz..(idx + 1) * bsz];
        for i in 0..m {
            let g = grid.inverse_metric(i);
            let a_start = ((idx * m + i) * m + i) * bsz;
            for c in 0..n {
                out.principal[a_start + c * n + c] = -g;
            }
            let d1 = jet.first(i, idx);
            let d2 = jet.second(i, idx);
            let b_start = (idx * m + i) * bsz;
            for gm in 0..n {
                for al in 0..n {
                    let mut b = 0.0;
                    let mut c = 0.0;
                    let mut r = 0.0;
                    for be in 0..n {
                        b += gam.get(gm, al, be) * d1[be];
                        c += gam.get(gm, al, be) * d2[be];
                        for ep in 0..n {
                            let quad = d1[ep] * d1[be];
                            c += dgam.get(gm, al, be, ep) * quad;
                            r += curv.get(gm, al, be, ep) * quad;
                            for de in 0..n {
                                c += gam.get(gm, de, be) * gam.get(de, al, ep) * quad;
                            }
                        }
                    }
                    out.first_order[b_start + gm * n + al] = -2.0 * g * b;
                    c_block[gm * n + al] -= g * (c + r);
                    r_block[gm * n + al] -= g * r;
                }
            }
        }
    }
    Ok(out)
}

/// Discretized Jacobi operator over the interior degrees of freedom
/// `(node, component)` of a base map.
#[derive(Debug, Clone)]
pub struct JacobiSystem {
    base: Arc<DiscreteMap>,
    dof_nodes: Vec<usize>,
    weak: CsrMatrix<f64>,
    strong: CsrMatrix<f64>,
    mass: CsrMatrix<f64>,
    scale: f64,
}

fn spmv(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let (offsets, cols, vals) = (a.row_offsets(), a.col_indices(), a.values());
    (0..a.nrows())
        .map(|r| (offsets[r]..offsets[r + 1]).map(|k| vals[k] * x[cols[k]]).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl JacobiSystem {
    pub fn base(&self) -> &Arc<DiscreteMap> {
        &self.base
    }

    pub fn dof_count(&self) -> usize {
        self.dof_nodes.len() * self.base.dim()
    }

    /// Nodes carrying degrees of freedom, in dof order.
    pub fn dof_nodes(&self) -> &[usize] {
        &self.dof_nodes
    }

    /// Symmetric second-variation matrix `Q`.
    pub fn weak(&self) -> &CsrMatrix<f64> {
        &self.weak
    }

    /// Strong-form operator `K` with `(K s)` the coefficients of `J s`.
    pub fn strong(&self) -> &CsrMatrix<f64> {
        &self.strong
    }

    /// Block-diagonal mass matrix `w(x) h(f(x))`.
    pub fn mass(&self) -> &CsrMatrix<f64> {
        &self.mass
    }

    /// Mean of `Q_kk / M_kk`, the natural unit for eigenvalues.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Interior coefficients of a section over the same base.
    pub fn restrict(&self, s: &Section) -> Result<Vec<f64>> {
        if !s.same_base_as(&self.base) {
            return Err(Error::BaseMismatch);
        }
        Ok(self.dof_nodes.iter().flat_map(|&idx| s.at(idx).iter().copied()).collect())
    }

    /// The section with the given interior coefficients (zero on the boundary).
    pub fn extend(&self, dofs: &[f64]) -> Result<Section> {
        if dofs.len() != self.dof_count() {
            return Err(Error::ShapeMismatch { expected: self.dof_count(), got: dofs.len() });
        }
        let n = self.base.dim();
        let mut coeffs = vec![0.0; self.base.values().len()];
        for (slot, &idx) in self.dof_nodes.iter().enumerate() {
            coeffs[idx * n..(idx + 1) * n].copy_from_slice(&dofs[slot * n..(slot + 1) * n]);
        }
        Section::new(Arc::clone(&self.base), coeffs)
    }

    pub fn apply_weak(&self, x: &[f64]) -> Vec<f64> {
        spmv(&self.weak, x)
    }

    pub fn apply_strong(&self, x: &[f64]) -> Vec<f64> {
        spmv(&self.strong, x)
    }

    pub fn apply_mass(&self, x: &[f64]) -> Vec<f64> {
        spmv(&self.mass, x)
    }

    /// `⟨K s, s′⟩_M`.
    pub fn strong_pairing(&self, s: &[f64], t: &[f64]) -> f64 {
        dot(&self.apply_mass(&self.apply_strong(s)), t)
    }

    /// `‖Q s − M K s‖ / (max_k Q_kk ‖s‖)`.
    pub fn assembly_mismatch(&self, s: &[f64]) -> f64 {
        let q = self.apply_weak(s);
        let mk = self.apply_mass(&self.apply_strong(s));
        let diff: Vec<f64> = q.iter().zip(&mk).map(|(a, b)| a - b).collect();
        norm(&diff) / (self.max_weak_diagonal() * norm(s))
    }

    pub(crate) fn max_weak_diagonal(&self) -> f64 {
        self.weak.diagonal_as_csr().values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Adds a dense `n × n` block at dof slots `(row, col)`.
fn push_block(coo: &mut CooMatrix<f64>, n: usize, row: usize, col: usize, block: &[f64]) {
    for r in 0..n {
        for c in 0..n {
            let v = block[r * n + c];
            if v != 0.0 {
                coo.push(row * n + r, col * n + c, v);
            }
        }
    }
}

/// Assembles `K` from [`CoefficientFields`] with central stencils, `Q` edge by
/// edge from the covariant differences `∇_e s = (s_b − s_a)/h + Γ(f_mid)(s_mid, Δf/h)`
/// minus the nodal curvature term, and the mass matrix `M`.
pub fn assemble_system(f: Arc<DiscreteMap>) -> Result<JacobiSystem> {
    let coeffs = assemble_coefficients(&f)?;
    let grid = f.grid();
    let target = f.target();
    let n = f.dim();
    let m = grid.dim();
    let dof_nodes = grid.interior_nodes();
    let mut node_slot = vec![None; f.node_count()];
    for (slot, &idx) in dof_nodes.iter().enumerate() {
        node_slot[idx] = Some(slot);
    }
    let ndof = dof_nodes.len() * n;
    let weights = grid.volume_weights();

    let mut strong = CooMatrix::new(ndof, ndof);
    let mut block = vec![0.0; n * n];
    for (slot, &idx) in dof_nodes.iter().enumerate() {
        push_block(&mut strong, n, slot, slot, coeffs.zeroth_order(idx));
        for i in 0..m {
            let h = grid.spacing(i);
            let a = coeffs.principal(idx, i, i);
            let b = coeffs.first_order(idx, i);
            let prev = grid.neighbor(idx, i, -1).expect("interior nodes have both neighbors");
            let next = grid.neighbor(idx, i, 1).expect("interior nodes have both neighbors");
            block.iter_mut().zip(a).for_each(|(o, a)| *o = -2.0 * a / (h * h));
            push_block(&mut strong, n, slot, slot, &block);
            for (node, sign) in [(prev, -1.0), (next, 1.0)] {
                if let Some(col) = node_slot[node] {
                    for k in 0..n * n {
                        block[k] = a[k] / (h * h) + sign * b[k] / (2.0 * h);
                    }
                    push_block(&mut strong, n, slot, col, &block);
                }
            }
        }
    }

    let mut weak = CooMatrix::new(ndof, ndof);
    let mut mid = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut ends = [vec![0.0; n * n], vec![0.0; n * n]];
    for axis in 0..m {
        let h = grid.spacing(axis);
        let g = grid.inverse_metric(axis);
        for &(a, b, w) in grid.edges(axis) {
            let slots = [node_slot[a], node_slot[b]];
            if slots.iter().all(Option::is_none) {
                continue;
            }
            let (fa, fb) = (f.value(a), f.value(b));
            for c in 0..n {
                let delta = target.chart_delta(fa[c], fb[c]);
                d[c] = delta / h;
                mid[c] = fa[c] + 0.5 * delta;
            }
            let gam = target.christoffels_at(&mid)?;
            let metric = target.metric_at(&mid)?;
            // ∇_e s = L_a s_a + L_b s_b, L_{a,b} = ∓I/h + ½ Γ(mid)(·, d).
            for (end, sign) in ends.iter_mut().zip([-1.0, 1.0]) {
                for r in 0..n {
                    for c in 0..n {
                        let conn: f64 = (0..n).map(|be| gam.get(r, c, be) * d[be]).sum();
                        end[r * n + c] = 0.5 * conn + if r == c { sign / h } else { 0.0 };
                    }
                }
            }
            for (u, su) in slots.iter().enumerate() {
                let Some(row) = su else { continue };
                for (v, sv) in slots.iter().enumerate() {
                    let Some(col) = sv else { continue };
                    for r in 0..n {
                        for c in 0..n {
                            let mut acc = 0.0;
                            for p in 0..n {
                                for q in 0..n {
                                    acc += ends[u][p * n + r] * metric[(p, q)] * ends[v][q * n + c];
                                }
                            }
                            block[r * n + c] = g * w * acc;
                        }
                    }
                    push_block(&mut weak, n, *row, *col, &block);
                }
            }
        }
    }
    let mut mass = CooMatrix::new(ndof, ndof);
    let mut q_diag = vec![0.0; ndof];
    for (slot, &idx) in dof_nodes.iter().enumerate() {
        let y = f.value(idx);
        let metric = target.metric_at(y)?;
        let w = weights[idx];
        for r in 0..n {
            for c in 0..n {
                block[r * n + c] = w * metric[(r, c)];
            }
        }
        push_block(&mut mass, n, slot, slot, &block);
        // −w ⟨R(s, ∂_i f)∂_i f, s′⟩ through the strong-form curvature potential.
        let pot = coeffs.curvature_potential(idx);
        for r in 0..n {
            for c in 0..n {
                block[r * n + c] = w * (0..n).map(|p| metric[(r, p)] * pot[p * n + c]).sum::<f64>();
            }
        }
        push_block(&mut weak, n, slot, slot, &block);
    }

    let raw = CsrMatrix::from(&weak);
    let mut weak = &raw + &raw.transpose();
    weak.values_mut().iter_mut().for_each(|v| *v *= 0.5);
    let mass = CsrMatrix::from(&mass);
    let qd = weak.diagonal_as_csr();
    let md = mass.diagonal_as_csr();
    for (r, c, v) in qd.triplet_iter() {
        debug_assert_eq!(r, c);
        q_diag[r] = *v;
    }
    let scale = if ndof == 0 {
        0.0
    } else {
        md.triplet_iter().map(|(r, _, v)| q_diag[r] / v).sum::<f64>() / ndof as f64
    };
    Ok(JacobiSystem { base: f, dof_nodes, weak, strong: CsrMatrix::from(&strong), mass, scale })
}
