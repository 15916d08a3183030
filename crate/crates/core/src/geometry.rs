//! Target manifolds described in a single global chart.
//!
//! Every shipped target is conformally flat in its chart, `h = φ(y) δ`, with
//! `φ = e^{2ψ}`. Christoffel symbols, their derivatives and the curvature
//! tensor are evaluated in closed form from `ψ`. Sign convention for the
//! curvature: `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_{[X,Y]}Z`, stored as
//! `R(∂_a, ∂_b)∂_c = R^d_{abc} ∂_d`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on the last half-space coordinate unless configured otherwise.
pub const DEFAULT_CHART_GUARD: f64 = 1e-6;

/// Tolerance for geometric sign checks on unit-scale inputs.
pub const GEOMETRY_EPS: f64 = 1e-9;

fn default_kappa() -> f64 {
    1.0
}

fn default_chart_guard() -> f64 {
    DEFAULT_CHART_GUARD
}

fn default_period() -> f64 {
    2.0 * PI
}

/// A complete non-positively curved target in one global chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetManifold {
    /// Flat `R^n`.
    Euclidean { dim: usize },
    /// Upper half-space `{y_n > 0}` with `h = δ / (κ y_n²)`, sectional curvature `−κ`.
    HyperbolicHalfSpace {
        dim: usize,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default = "default_chart_guard")]
        chart_guard: f64,
    },
    /// Flat torus `R^n / (period Z)^n`; chart values are lifts to the universal cover.
    FlatTorusChart {
        dim: usize,
        #[serde(default = "default_period")]
        period: f64,
    },
}

/// Christoffel symbols `Γ^γ_{αβ}` at one chart point.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffels {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffels {
    fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, gamma: usize, alpha: usize, beta: usize) -> f64 {
        let n = self.dim;
        self.data[(gamma * n + alpha) * n + beta]
    }

    #[inline]
    fn set(&mut self, gamma: usize, alpha: usize, beta: usize, value: f64) {
        let n = self.dim;
        self.data[(gamma * n + alpha) * n + beta] = value;
    }

    /// `Γ(a, b)^γ = Γ^γ_{αβ} a^α b^β`.
    pub fn contract(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|g| {
                let mut acc = 0.0;
                for (al, a_al) in a.iter().enumerate() {
                    for (be, b_be) in b.iter().enumerate() {
                        acc += self.get(g, al, be) * a_al * b_be;
                    }
                }
                acc
            })
            .collect()
    }
}

/// Partial derivatives `∂_ε Γ^γ_{αβ}` at one chart point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelGradient {
    dim: usize,
    data: Vec<f64>,
}

impl ChristoffelGradient {
    #[inline]
    pub fn get(&self, gamma: usize, alpha: usize, beta: usize, eps: usize) -> f64 {
        let n = self.dim;
        self.data[((gamma * n + alpha) * n + beta) * n + eps]
    }
}

/// Curvature coefficients `R^d_{abc}` with `R(∂_a, ∂_b)∂_c = R^d_{abc} ∂_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureTensor {
    dim: usize,
    data: Vec<f64>,
}

impl CurvatureTensor {
    #[inline]
    pub fn get(&self, d: usize, a: usize, b: usize, c: usize) -> f64 {
        let n = self.dim;
        self.data[((d * n + a) * n + b) * n + c]
    }

    /// `R(s, w)w`.
    pub fn apply(&self, s: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|d| {
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            acc += self.get(d, a, b, c) * s[a] * w[b] * w[c];
                        }
                    }
                }
                acc
            })
            .collect()
    }
}

impl TargetManifold {
    pub fn euclidean(dim: usize) -> Self {
        Self::Euclidean { dim }
    }

    pub fn hyperbolic(dim: usize, kappa: f64) -> Self {
        Self::HyperbolicHalfSpace { dim, kappa, chart_guard: DEFAULT_CHART_GUARD }
    }

    pub fn flat_torus(dim: usize) -> Self {
        Self::FlatTorusChart { dim, period: default_period() }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Self::Euclidean { dim }
            | Self::HyperbolicHalfSpace { dim, .. }
            | Self::FlatTorusChart { dim, .. } => dim,
        }
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self, Self::HyperbolicHalfSpace { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDescriptor(msg));
        match *self {
            Self::Euclidean { dim } if dim == 0 => bad("target dimension must be positive".into()),
            Self::HyperbolicHalfSpace { dim, kappa, chart_guard } => {
                if dim < 2 {
                    bad(format!("half-space model needs dim >= 2, got {dim}"))
                } else if !(kappa.is_finite() && kappa > 0.0) {
                    bad(format!("curvature scale kappa must be positive, got {kappa}"))
                } else if !(chart_guard.is_finite() && chart_guard > 0.0) {
                    bad(format!("chart_guard must be positive, got {chart_guard}"))
                } else {
                    Ok(())
                }
            }
            Self::FlatTorusChart { dim, period } => {
                if dim == 0 {
                    bad("target dimension must be positive".into())
                } else if !(period.is_finite() && period > 0.0) {
                    bad(format!("torus period must be positive, got {period}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Checks that `y` lies in the admissible chart region.
    pub fn check_admissible(&self, y: &[f64]) -> Result<()> {
        let n = self.dim();
        if y.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::ChartViolation(format!("non-finite chart point {y:?}")));
        }
        if let Self::HyperbolicHalfSpace { chart_guard, .. } = *self {
            let last = y[n - 1];
            if last < chart_guard {
                return Err(Error::ChartViolation(format!(
                    "last coordinate {last:e} below chart guard {chart_guard:e}"
                )));
            }
        }
        Ok(())
    }

    /// Conformal factor `φ(y)` with `h = φ δ`.
    #[inline]
    pub(crate) fn conformal_factor(&self, y: &[f64]) -> f64 {
        match *self {
            Self::HyperbolicHalfSpace { kappa, .. } => {
                let last = y[y.len() - 1];
                1.0 / (kappa * last * last)
            }
            _ => 1.0,
        }
    }

    /// `∂_n φ` for the half-space (all other partials vanish); zero for flat kinds.
    #[inline]
    pub(crate) fn conformal_factor_last_derivative(&self, y: &[f64]) -> f64 {
        match *self {
            Self::HyperbolicHalfSpace { kappa, .. } => {
                let last = y[y.len() - 1];
                -2.0 / (kappa * last * last * last)
            }
            _ => 0.0,
        }
    }

    /// `∂_n ψ` and `∂_n ∂_n ψ` of the log-conformal factor `ψ = ½ log φ`.
    #[inline]
    fn log_factor_derivatives(&self, y: &[f64]) -> (f64, f64) {
        match *self {
            Self::HyperbolicHalfSpace { .. } => {
                let last = y[y.len() - 1];
                (-1.0 / last, 1.0 / (last * last))
            }
            _ => (0.0, 0.0),
        }
    }

    /// `h(a, b)` at `y`, without admissibility checks.
    #[inline]
    pub(crate) fn inner_unchecked(&self, y: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, z)| x * z).sum();
        self.conformal_factor(y) * dot
    }

    /// `h(a, b)` at `y`.
    pub fn inner(&self, y: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_admissible(y)?;
        Ok(self.inner_unchecked(y, a, b))
    }

    pub fn metric_at(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_admissible(y)?;
        let n = self.dim();
        Ok(DMatrix::identity(n, n) * self.conformal_factor(y))
    }

    pub fn christoffels_at(&self, y: &[f64]) -> Result<Christoffels> {
        self.check_admissible(y)?;
        let n = self.dim();
        let mut out = Christoffels::zeros(n);
        let (dpsi, _) = self.log_factor_derivatives(y);
        if dpsi == 0.0 {
            return Ok(out);
        }
        let last = n - 1;
        // Γ^γ_{αβ} = δ^γ_α ∂_β ψ + δ^γ_β ∂_α ψ − δ_{αβ} ∂_γ ψ with ∂ψ = dpsi e_last.
        for g in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut v = 0.0;
                    if g == a && b == last {
                        v += dpsi;
                    }
                    if g == b && a == last {
                        v += dpsi;
                    }
                    if a == b && g == last {
                        v -= dpsi;
                    }
                    out.set(g, a, b, v);
                }
            }
        }
        Ok(out)
    }

    /// `Γ(a, b)` in closed form, without admissibility checks.
    #[inline]
    pub(crate) fn connection_unchecked(&self, y: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        let (dpsi, _) = self.log_factor_derivatives(y);
        if dpsi == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let n = a.len();
        let last = n - 1;
        let dot: f64 = a.iter().zip(b).map(|(x, z)| x * z).sum();
        for g in 0..n {
            out[g] = dpsi * (a[g] * b[last] + b[g] * a[last]);
        }
        out[last] -= dpsi * dot;
    }

    /// `Γ(a, b)^γ = Γ^γ_{αβ}(y) a^α b^β`.
    pub fn connection(&self, y: &[f64], a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.check_admissible(y)?;
        let mut out = vec![0.0; self.dim()];
        self.connection_unchecked(y, a, b, &mut out);
        Ok(out)
    }

    pub fn christoffel_gradient_at(&self, y: &[f64]) -> Result<ChristoffelGradient> {
        self.check_admissible(y)?;
        let n = self.dim();
        let mut data = vec![0.0; n * n * n * n];
        let (_, ddpsi) = self.log_factor_derivatives(y);
        if ddpsi != 0.0 {
            let last = n - 1;
            // Only ∂_last ∂_last ψ is non-zero.
            for g in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let mut v = 0.0;
                        if g == a && b == last {
                            v += ddpsi;
                        }
                        if g == b && a == last {
                            v += ddpsi;
                        }
                        if a == b && g == last {
                            v -= ddpsi;
                        }
                        data[((g * n + a) * n + b) * n + last] = v;
                    }
                }
            }
        }
        Ok(ChristoffelGradient { dim: n, data })
    }

    /// Sectional curvature of the target (constant for every shipped kind).
    pub fn constant_curvature(&self) -> f64 {
        match *self {
            Self::HyperbolicHalfSpace { kappa, .. } => -kappa,
            _ => 0.0,
        }
    }

    pub fn curvature_at(&self, y: &[f64]) -> Result<CurvatureTensor> {
        self.check_admissible(y)?;
        let n = self.dim();
        let k = self.constant_curvature();
        let phi = self.conformal_factor(y);
        let mut data = vec![0.0; n * n * n * n];
        if k != 0.0 {
            // R(∂_a, ∂_b)∂_c = K (h_{bc} ∂_a − h_{ac} ∂_b)
            for d in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            let mut v = 0.0;
                            if b == c && d == a {
                                v += phi;
                            }
                            if a == c && d == b {
                                v -= phi;
                            }
                            data[((d * n + a) * n + b) * n + c] = k * v;
                        }
                    }
                }
            }
        }
        Ok(CurvatureTensor { dim: n, data })
    }

    /// `R(s, w)w = K (|w|² s − ⟨s, w⟩ w)`, without admissibility checks.
    #[inline]
    pub(crate) fn riemann_apply_unchecked(&self, y: &[f64], s: &[f64], w: &[f64], out: &mut [f64]) {
        let k = self.constant_curvature();
        if k == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let ww = self.inner_unchecked(y, w, w);
        let sw = self.inner_unchecked(y, s, w);
        for ((o, si), wi) in out.iter_mut().zip(s).zip(w) {
            *o = k * (ww * si - sw * wi);
        }
    }

    /// `R(s, w)w` at `y`.
    pub fn riemann_apply(&self, y: &[f64], s: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_admissible(y)?;
        let mut out = vec![0.0; self.dim()];
        self.riemann_apply_unchecked(y, s, w, &mut out);
        Ok(out)
    }

    /// `⟨R(s,w)w, s⟩ / (|s|²|w|² − ⟨s,w⟩²)`; `None` when `s ∧ w` vanishes.
    pub fn sectional_curvature(&self, y: &[f64], s: &[f64], w: &[f64]) -> Result<Option<f64>> {
        let r = self.riemann_apply(y, s, w)?;
        let num = self.inner_unchecked(y, &r, s);
        let ss = self.inner_unchecked(y, s, s);
        let ww = self.inner_unchecked(y, w, w);
        let sw = self.inner_unchecked(y, s, w);
        let area = ss * ww - sw * sw;
        if area <= GEOMETRY_EPS * ss * ww {
            return Ok(None);
        }
        Ok(Some(num / area))
    }

    /// Chart difference `b − a` of component `alpha`, reduced to the nearest
    /// lattice representative on the torus.
    #[inline]
    pub fn chart_delta(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        match *self {
            Self::FlatTorusChart { period, .. } => d - period * (d / period).round(),
            _ => d,
        }
    }

    /// Riemannian distance between chart points.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_admissible(a)?;
        self.check_admissible(b)?;
        let sq: f64 = a.iter().zip(b).map(|(x, z)| self.chart_delta(*x, *z).powi(2)).sum();
        Ok(match *self {
            Self::HyperbolicHalfSpace { kappa, .. } => {
                let n = a.len();
                (1.0 + sq / (2.0 * a[n - 1] * b[n - 1])).acosh() / kappa.sqrt()
            }
            _ => sq.sqrt(),
        })
    }

    /// Geodesic `γ(t)` with `γ(0) = y`, `γ'(0) = v`, in closed form.
    pub fn exp_map(&self, y: &[f64], v: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_admissible(y)?;
        if v.len() != y.len() {
            return Err(Error::ShapeMismatch { expected: y.len(), got: v.len() });
        }
        let mut out = vec![0.0; y.len()];
        self.exp_map_unchecked(y, v, t, &mut out);
        self.check_admissible(&out)?;
        Ok(out)
    }

    /// Closed-form geodesic without admissibility checks on the end point.
    ///
    /// In the half-space the geodesic stays in the vertical plane spanned by
    /// `e_n` and the horizontal part `u` of `v`. With `s = |v|/y_n` and
    /// `D = |v| cosh(st) − v_n sinh(st)` the end point is
    /// `(y_h + y_n u sinh(st)/D, y_n |v| / D)`. Along the way `y_n(t)` has no
    /// interior minimum, so checking the end point is enough.
    pub(crate) fn exp_map_unchecked(&self, y: &[f64], v: &[f64], t: f64, out: &mut [f64]) {
        match *self {
            Self::HyperbolicHalfSpace { .. } => {
                let n = y.len();
                let speed = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                if speed == 0.0 || t == 0.0 {
                    out.copy_from_slice(y);
                    return;
                }
                let yn = y[n - 1];
                let arg = speed * t / yn;
                let (sh, ch) = (arg.sinh(), arg.cosh());
                let denom = speed * ch - v[n - 1] * sh;
                for i in 0..n - 1 {
                    out[i] = y[i] + yn * v[i] * sh / denom;
                }
                out[n - 1] = yn * speed / denom;
            }
            _ => {
                for ((o, yi), vi) in out.iter_mut().zip(y).zip(v) {
                    *o = yi + t * vi;
                }
            }
        }
    }

    /// Integrates `γ'' + Γ(γ', γ') = 0` with classical RK4 on `substeps` steps.
    ///
    /// Generic in the Christoffel symbols; serves as the fallback and as an
    /// independent check on the closed forms.
    pub fn integrate_geodesic(&self, y: &[f64], v: &[f64], t: f64, substeps: usize) -> Result<Vec<f64>> {
        self.check_admissible(y)?;
        let n = y.len();
        if v.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: v.len() });
        }
        let steps = substeps.max(1);
        let h = t / steps as f64;
        let rhs = |pos: &[f64], vel: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
            let gamma = self.christoffels_at(pos)?;
            let acc = gamma.contract(vel, vel).into_iter().map(|a| -a).collect();
            Ok((vel.to_vec(), acc))
        };
        let axpy = |base: &[f64], dir: &[f64], s: f64| -> Vec<f64> {
            base.iter().zip(dir).map(|(b, d)| b + s * d).collect()
        };
        let mut pos = y.to_vec();
        let mut vel = v.to_vec();
        for _ in 0..steps {
            let (k1p, k1v) = rhs(&pos, &vel)?;
            let (k2p, k2v) = rhs(&axpy(&pos, &k1p, h / 2.0), &axpy(&vel, &k1v, h / 2.0))?;
            let (k3p, k3v) = rhs(&axpy(&pos, &k2p, h / 2.0), &axpy(&vel, &k2v, h / 2.0))?;
            let (k4p, k4v) = rhs(&axpy(&pos, &k3p, h), &axpy(&vel, &k3v, h))?;
            for i in 0..n {
                pos[i] += h / 6.0 * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i]);
                vel[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
            }
            self.check_admissible(&pos)?;
        }
        Ok(pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn h2(kappa: f64) -> TargetManifold {
        TargetManifold::hyperbolic(2, kappa)
    }

    /// Koszul formula with central finite differences of `metric_at`.
    fn koszul_fd(target: &TargetManifold, y: &[f64], step: f64) -> Vec<f64> {
        let n = y.len();
        let dh: Vec<DMatrix<f64>> = (0..n)
            .map(|k| {
                let mut yp = y.to_vec();
                let mut ym = y.to_vec();
                yp[k] += step;
                ym[k] -= step;
                (target.metric_at(&yp).unwrap() - target.metric_at(&ym).unwrap()) / (2.0 * step)
            })
            .collect();
        let hinv = target.metric_at(y).unwrap().try_inverse().unwrap();
        let mut out = vec![0.0; n * n * n];
        for g in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut acc = 0.0;
                    for d in 0..n {
                        acc += 0.5 * hinv[(g, d)] * (dh[a][(d, b)] + dh[b][(d, a)] - dh[d][(a, b)]);
                    }
                    out[(g * n + a) * n + b] = acc;
                }
            }
        }
        out
    }

    /// Curvature from finite differences of the Christoffel symbols.
    fn curvature_fd(target: &TargetManifold, y: &[f64], step: f64) -> Vec<f64> {
        let n = y.len();
        let gam = target.christoffels_at(y).unwrap();
        let dgam: Vec<Christoffels> = (0..n)
            .map(|k| {
                let mut yp = y.to_vec();
                let mut ym = y.to_vec();
                yp[k] += step;
                ym[k] -= step;
                let p = target.christoffels_at(&yp).unwrap();
                let m = target.christoffels_at(&ym).unwrap();
                Christoffels {
                    dim: n,
                    data: p.data.iter().zip(&m.data).map(|(a, b)| (a - b) / (2.0 * step)).collect(),
                }
            })
            .collect();
        let mut out = vec![0.0; n * n * n * n];
        for d in 0..n {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let mut v = dgam[a].get(d, b, c) - dgam[b].get(d, a, c);
                        for e in 0..n {
                            v += gam.get(d, a, e) * gam.get(e, b, c) - gam.get(d, b, e) * gam.get(e, a, c);
                        }
                        out[((d * n + a) * n + b) * n + c] = v;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn metric_examples() {
        let e = TargetManifold::euclidean(2);
        assert_eq!(e.metric_at(&[3.0, -1.0]).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(h2(1.0).metric_at(&[0.0, 1.0]).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(h2(1.0).metric_at(&[0.0, 2.0]).unwrap(), DMatrix::identity(2, 2) * 0.25);
    }

    #[test]
    fn chart_guard_rejects_boundary_points() {
        let t = h2(1.0);
        assert!(matches!(t.metric_at(&[0.0, 1e-7]), Err(Error::ChartViolation(_))));
        assert!(matches!(t.metric_at(&[0.0, -1.0]), Err(Error::ChartViolation(_))));
        assert!(matches!(t.metric_at(&[0.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn christoffel_examples() {
        let g = h2(1.0).christoffels_at(&[0.0, 1.0]).unwrap();
        assert_eq!(g.get(0, 0, 1), -1.0);
        assert_eq!(g.get(0, 1, 0), -1.0);
        assert_eq!(g.get(1, 0, 0), 1.0);
        assert_eq!(g.get(1, 1, 1), -1.0);
        assert_eq!(g.get(0, 0, 0), 0.0);
        assert_eq!(g.get(0, 1, 1), 0.0);
        assert_eq!(g.get(1, 0, 1), 0.0);
        assert_eq!(g.get(1, 1, 0), 0.0);
        for t in [TargetManifold::euclidean(3), TargetManifold::flat_torus(2)] {
            let y = vec![0.3; t.dim()];
            assert!(t.christoffels_at(&y).unwrap().data.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn christoffels_match_koszul_oracle_at_second_order() {
        let t = TargetManifold::hyperbolic(3, 2.5);
        let y = [0.4, -1.2, 0.7];
        let exact = t.christoffels_at(&y).unwrap().data;
        let err = |step: f64| {
            koszul_fd(&t, &y, step).iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!(e1 < 1e-3, "coarse error {e1}");
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "refinement ratio {ratio}");
    }

    #[test]
    fn christoffel_gradient_matches_finite_differences() {
        let t = TargetManifold::hyperbolic(3, 1.0);
        let y = [0.1, 0.2, 1.3];
        let grad = t.christoffel_gradient_at(&y).unwrap();
        let step = 1e-5;
        for e in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[e] += step;
            ym[e] -= step;
            let p = t.christoffels_at(&yp).unwrap();
            let m = t.christoffels_at(&ym).unwrap();
            for g in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        let fd = (p.get(g, a, b) - m.get(g, a, b)) / (2.0 * step);
                        assert_abs_diff_eq!(grad.get(g, a, b, e), fd, epsilon = 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn connection_contraction_matches_symbols() {
        let t = TargetManifold::hyperbolic(3, 0.5);
        let y = [1.0, -2.0, 0.3];
        let (a, b) = ([0.2, -1.0, 0.7], [1.5, 0.4, -0.3]);
        let full = t.christoffels_at(&y).unwrap().contract(&a, &b);
        let fast = t.connection(&y, &a, &b).unwrap();
        for (x, z) in full.iter().zip(&fast) {
            assert_abs_diff_eq!(x, z, epsilon = 1e-14);
        }
    }

    #[test]
    fn sectional_curvature_examples() {
        let y = [0.0, 1.0];
        let (s, w) = ([1.0, 0.0], [0.0, 1.0]);
        let sec = |k: f64| h2(k).sectional_curvature(&y, &s, &w).unwrap().unwrap();
        assert_abs_diff_eq!(sec(1.0), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sec(4.0), -4.0, epsilon = 1e-12);
        let e = TargetManifold::euclidean(2);
        assert_eq!(e.riemann_apply(&y, &s, &w).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn curvature_matches_christoffel_commutator_oracle() {
        for kappa in [1.0, 4.0] {
            let t = h2(kappa);
            let y = [0.3, 0.8];
            let exact = t.curvature_at(&y).unwrap();
            let fd = curvature_fd(&t, &y, 1e-4);
            for (a, b) in exact.data.iter().zip(&fd) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
            let s = [1.0, 0.0];
            let w = [0.0, 1.0];
            let via_tensor = exact.apply(&s, &w);
            let direct = t.riemann_apply(&y, &s, &w).unwrap();
            for (a, b) in via_tensor.iter().zip(&direct) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exp_map_examples() {
        let e = TargetManifold::euclidean(2);
        assert_eq!(e.exp_map(&[1.0, 2.0], &[3.0, 4.0], 1.0).unwrap(), vec![4.0, 6.0]);
        let t = h2(1.0);
        for time in [0.25, 1.0, 2.0] {
            let up = t.exp_map(&[0.0, 1.0], &[0.0, 1.0], time).unwrap();
            assert_abs_diff_eq!(up[0], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(up[1], f64::exp(time), epsilon = 1e-12);
            let arc = t.exp_map(&[0.0, 1.0], &[1.0, 0.0], time).unwrap();
            assert_abs_diff_eq!(arc[0], time.tanh(), epsilon = 1e-14);
            assert_abs_diff_eq!(arc[1], 1.0 / time.cosh(), epsilon = 1e-14);
        }
    }

    #[test]
    fn exp_map_matches_geodesic_integration() {
        let t = TargetManifold::hyperbolic(3, 3.0);
        let y = [0.2, -0.4, 0.9];
        let v = [0.7, -0.3, 0.45];
        for time in [0.5, 1.0, 2.0] {
            let closed = t.exp_map(&y, &v, time).unwrap();
            let ode = t.integrate_geodesic(&y, &v, time, 4000).unwrap();
            for (a, b) in closed.iter().zip(&ode) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn exp_map_detects_chart_exit() {
        let t = h2(1.0);
        let err = t.exp_map(&[0.0, 1.0], &[0.0, -1.0], 20.0).unwrap_err();
        assert!(matches!(err, Error::ChartViolation(_)));
    }

    #[test]
    fn torus_delta_wraps_to_nearest_lift() {
        let t = TargetManifold::flat_torus(1);
        let p = 2.0 * PI;
        assert_abs_diff_eq!(t.chart_delta(0.1, p - 0.1), -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(t.chart_delta(0.0, 0.3), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(t.distance(&[0.1], &[p - 0.1]).unwrap(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn hyperbolic_distance_matches_geodesic_length() {
        let t = h2(1.0);
        let d = t.distance(&[0.0, 1.0], &[0.0, f64::exp(1.5)]).unwrap();
        assert_abs_diff_eq!(d, 1.5, epsilon = 1e-12);
        let d = t.distance(&[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d, 3.0f64.acosh(), epsilon = 1e-12);
    }

    #[test]
    fn descriptors_reject_bad_parameters() {
        assert!(TargetManifold::hyperbolic(1, 1.0).validate().is_err());
        assert!(TargetManifold::hyperbolic(2, -1.0).validate().is_err());
        assert!(TargetManifold::euclidean(0).validate().is_err());
        assert!(TargetManifold::flat_torus(2).validate().is_ok());
    }

    fn point3() -> impl Strategy<Value = [f64; 3]> {
        (-3.0..3.0f64, -3.0..3.0f64, 0.05..4.0f64).prop_map(|(a, b, c)| [a, b, c])
    }

    fn vec3() -> impl Strategy<Value = [f64; 3]> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| [a, b, c])
    }

    proptest! {
        #[test]
        fn curvature_sign_is_non_positive(y in point3(), s in vec3(), w in vec3(), kappa in 0.1..5.0f64) {
            let t = TargetManifold::hyperbolic(3, kappa);
            // Rescale to unit-size vectors in the local metric.
            let scale = y[2] * kappa.sqrt();
            let s: Vec<f64> = s.iter().map(|c| c * scale).collect();
            let w: Vec<f64> = w.iter().map(|c| c * scale).collect();
            let r = t.riemann_apply(&y, &s, &w).unwrap();
            prop_assert!(t.inner(&y, &r, &s).unwrap() <= GEOMETRY_EPS);
        }

        #[test]
        fn christoffels_are_symmetric(y in point3(), kappa in 0.1..5.0f64) {
            let g = TargetManifold::hyperbolic(3, kappa).christoffels_at(&y).unwrap();
            for c in 0..3 { for a in 0..3 { for b in 0..3 {
                prop_assert_eq!(g.get(c, a, b), g.get(c, b, a));
            }}}
        }

        #[test]
        fn geodesics_reverse_and_keep_speed(y in point3(), v in vec3(), time in 0.0..1.5f64) {
            let t = TargetManifold::hyperbolic(3, 1.0);
            let v: Vec<f64> = v.iter().map(|c| c * y[2]).collect();
            let Ok(end) = t.exp_map(&y, &v, time) else { return Ok(()); };
            // Velocity at the end point from a symmetric difference of the closed form.
            let dt = 1e-5;
            let ahead = t.exp_map(&y, &v, time + dt).unwrap();
            let behind = t.exp_map(&y, &v, time - dt).unwrap();
            let vel: Vec<f64> = ahead.iter().zip(&behind).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
            let speed0 = t.inner(&y, &v, &v).unwrap().sqrt();
            let speed1 = t.inner(&end, &vel, &vel).unwrap().sqrt();
            prop_assert!((speed0 - speed1).abs() <= 1e-6 * (1.0 + speed0));
            let back: Vec<f64> = vel.iter().map(|c| -c).collect();
            let start = t.exp_map(&end, &back, time).unwrap();
            for (a, b) in start.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
            }
        }
    }
}
