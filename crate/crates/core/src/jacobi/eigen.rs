use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assembly::JacobiSystem;
use super::KERNEL_THRESHOLD;
use crate::error::{Error, Result};
use crate::map::Section;

/// Regularizing shift `σ = SHIFT · scale` so that kernels stay solvable.
const SHIFT: f64 = 1e-4;
const INNER_TOLERANCE: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenOptions {
    /// Relative residual `‖Q v − λ M v‖ / (max Q_kk ‖v‖)` accepted per pair.
    pub tol: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Extra subspace columns beyond the requested count.
    pub guard: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iterations: 10_000, seed: 0x5eed, guard: 4 }
    }
}

/// A generalized eigenpair `Q v = λ M v` with `vᵀ M v = 1`, over interior dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

impl EigenPair {
    pub fn section(&self, system: &JacobiSystem) -> Result<Section> {
        system.extend(&self.vector)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub lambda: Vec<f64>,
    pub residuals: Vec<f64>,
    pub degenerate: bool,
    pub kernel_dim: usize,
}

/// Kernel eigenvalues are those below `KERNEL_THRESHOLD · scale`.
pub fn spectrum_report(system: &JacobiSystem, pairs: &[EigenPair]) -> SpectrumReport {
    let threshold = KERNEL_THRESHOLD * system.scale();
    let kernel_dim = pairs.iter().filter(|p| p.value < threshold).count();
    SpectrumReport {
        lambda: pairs.iter().map(|p| p.value).collect(),
        residuals: pairs.iter().map(|p| p.residual).collect(),
        degenerate: kernel_dim > 0,
        kernel_dim,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// `sᵀ Q s / sᵀ M s`.
pub fn rayleigh(system: &JacobiSystem, s: &Section) -> Result<f64> {
    let x = system.restrict(s)?;
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroSection);
    }
    Ok(dot(&system.apply_weak(&x), &x) / dot(&system.apply_mass(&x), &x))
}

/// Jacobi-preconditioned conjugate gradients on `(Q + σM) x = b`, warm-started
/// from `x`; returns the final relative residual.
fn solve_shifted(system: &JacobiSystem, sigma: f64, diag: &[f64], b: &[f64], x: &mut [f64]) -> f64 {
    let apply = |v: &[f64]| {
        let mut out = system.apply_weak(v);
        axpy(sigma, &system.apply_mass(v), &mut out);
        out
    };
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return 0.0;
    }
    let ax = apply(x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iter = 20 * x.len() + 100;
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    for _ in 0..max_iter {
        if rel <= INNER_TOLERANCE {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rel = dot(&r, &r).sqrt() / b_norm;
        z.iter_mut().zip(&r).zip(diag).for_each(|((z, r), d)| *z = r / d);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    rel
}

/// Modified Gram–Schmidt in the `M` inner product, applied twice; columns that
/// collapse are replaced by fresh random vectors.
fn m_orthonormalize(system: &JacobiSystem, basis: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for j in 0..basis.len() {
        for attempt in 0.. {
            let before = dot(&system.apply_mass(&basis[j]), &basis[j]).sqrt();
            for _ in 0..2 {
                for i in 0..j {
                    let mi = system.apply_mass(&basis[i]);
                    let c = dot(&mi, &basis[j]);
                    let (head, tail) = basis.split_at_mut(j);
                    axpy(-c, &head[i], &mut tail[0]);
                }
            }
            let after = dot(&system.apply_mass(&basis[j]), &basis[j]).sqrt();
            if after > 1e-10 * before && after > 0.0 {
                basis[j].iter_mut().for_each(|v| *v /= after);
                break;
            }
            assert!(attempt < 100, "cannot complete an M-orthonormal basis");
            basis[j].iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
    }
}

/// Rayleigh–Ritz on an `M`-orthonormal basis: rotates it onto Ritz vectors,
/// ascending, and returns the Ritz values.
fn rayleigh_ritz(system: &JacobiSystem, basis: &mut Vec<Vec<f64>>) -> Vec<f64> {
    let p = basis.len();
    let images: Vec<Vec<f64>> = basis.iter().map(|b| system.apply_weak(b)).collect();
    let h = DMatrix::from_fn(p, p, |i, j| 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i])));
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let len = basis[0].len();
    let rotated: Vec<Vec<f64>> = order
        .iter()
        .map(|&c| {
            let mut v = vec![0.0; len];
            for (i, b) in basis.iter().enumerate() {
                axpy(eig.eigenvectors[(i, c)], b, &mut v);
            }
            v
        })
        .collect();
    *basis = rotated;
    order.iter().map(|&c| eig.eigenvalues[c]).collect()
}

/// The `k` smallest generalized eigenpairs of `(Q, M)` by block inverse
/// iteration with Rayleigh–Ritz; leading pairs lock once their residual drops
/// below `tol` and leave the inner solves.
pub fn lowest_eigs(system: &JacobiSystem, k: usize, opts: &EigenOptions) -> Result<Vec<EigenPair>> {
    let ndof = system.dof_count();
    if k == 0 || k > ndof {
        return Err(Error::InvalidDescriptor(format!("requested {k} eigenpairs from {ndof} degrees of freedom")));
    }
    let p = (k + opts.guard.max(k)).min(ndof);
    let sigma = SHIFT * system.scale();
    let q_max = system.max_weak_diagonal();
    let diag: Vec<f64> = {
        let mut d = vec![0.0; ndof];
        for (r, c, v) in system.weak().triplet_iter() {
            if r == c {
                d[r] += v;
            }
        }
        for (r, c, v) in system.mass().triplet_iter() {
            if r == c {
                d[r] += sigma * v;
            }
        }
        d
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<Vec<f64>> = (0..p).map(|_| (0..ndof).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    m_orthonormalize(system, &mut basis, &mut rng);
    let mut theta = rayleigh_ritz(system, &mut basis);
    let mut best = f64::INFINITY;
    let mut locked = 0;
    for _ in 0..opts.max_iterations {
        let residuals: Vec<f64> = (0..k)
            .map(|j| {
                let mut r = system.apply_weak(&basis[j]);
                axpy(-theta[j], &system.apply_mass(&basis[j]), &mut r);
                dot(&r, &r).sqrt() / (q_max * dot(&basis[j], &basis[j]).sqrt())
            })
            .collect();
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        best = best.min(worst);
        if p == ndof || residuals.iter().all(|r| *r <= opts.tol) {
            return Ok((0..k)
                .map(|j| EigenPair { value: theta[j], vector: basis[j].clone(), residual: residuals[j] })
                .collect());
        }
        locked = locked.max(residuals.iter().take_while(|r| **r <= opts.tol).count());
        for j in locked..p {
            let rhs = system.apply_mass(&basis[j]);
            let mut x: Vec<f64> = basis[j].iter().map(|v| v / (theta[j] + sigma).max(f64::MIN_POSITIVE)).collect();
            solve_shifted(system, sigma, &diag, &rhs, &mut x);
            basis[j] = x;
        }
        m_orthonormalize(system, &mut basis, &mut rng);
        theta = rayleigh_ritz(system, &mut basis);
    }
    Err(Error::NoConvergence { iterations: opts.max_iterations, residual: best })
}
