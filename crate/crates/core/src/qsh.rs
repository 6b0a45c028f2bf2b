//! The qSH metric `g = α·g0 + (β−α)·w⊗w` and coordinates adapted to it.
//!
//! `α = 1/a66`, `β = 1/a55` and `w` is the axis one-form scaled to unit dual
//! `g0`-length. Because `w ∝ df`, the curves of `∇^{g0} f` and `∇^g f` agree
//! up to parameterization. Coordinates `(y1, y2)` transported along them,
//! with `y3 = f`, put `g` in block form.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::field::ScalarField;
use crate::linalg::{Mat3, Vec3};
use crate::material::{MaterialField, ZERO_GRADIENT_TOL};
use crate::ode::{self, OdeOptions};

/// Relative eigenvalue separation below which two eigenvalues are paired.
pub const PAIRING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum QshError {
    #[error("metric is conformal to g0 (alpha = {alpha}); the axis is undefined")]
    ConformalPoint { alpha: f64 },
    #[error("generalized eigenvalues {eigs:?} have no doubled pair")]
    NotRankOne { eigs: [f64; 3] },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("layer-function gradient vanishes at {x:?}")]
    ZeroGradient { x: Vec3 },
    #[error("gradient flow is nearly tangent to the seed patch (|cos| = {cos:e}) at {x:?}")]
    TangencyError { x: Vec3, cos: f64 },
    #[error("gradient-flow integration failed at {x:?}")]
    FlowFailure { x: Vec3 },
}

/// Where `α` and `β` come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    Fields { alpha: ScalarField, beta: ScalarField },
    /// `α = 1/a66`, `β = 1/a55` of a TI medium.
    Material(alloc::boxed::Box<MaterialField>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOneMetric {
    pub coefficients: Coefficients,
    /// The axis one-form is `df` normalized.
    pub layer: ScalarField,
    pub g0: Mat3,
}

impl RankOneMetric {
    pub fn from_material(m: &MaterialField) -> Self {
        RankOneMetric { coefficients: Coefficients::Material(alloc::boxed::Box::new(m.clone())), layer: m.layer.clone(), g0: m.g0 }
    }

    pub fn alpha_beta(&self, x: Vec3) -> (f64, f64) {
        match &self.coefficients {
            Coefficients::Fields { alpha, beta } => (alpha.value(x), beta.value(x)),
            Coefficients::Material(m) => {
                let mo = m.moduli(x);
                (1.0 / mo.a66, 1.0 / mo.a55)
            }
        }
    }

    /// `w = df / |df|_{G0}`.
    pub fn axis_form(&self, x: Vec3) -> Result<Vec3, QshError> {
        let g = self.layer.gradient(x);
        let gi = self.g0.inverse(1e-14).ok_or(QshError::NotPositiveDefinite)?;
        let n = g.dot(gi.mul_vec(g)).sqrt();
        if !(n > ZERO_GRADIENT_TOL) {
            return Err(QshError::ZeroGradient { x });
        }
        Ok(g * (1.0 / n))
    }
}

/// `α·g0 + (β−α)·w⊗w` with `w` rescaled to unit dual length.
pub fn metric_from_parts(alpha: f64, beta: f64, w: Vec3, g0: &Mat3) -> Mat3 {
    let gi = g0.inverse(1e-14).expect("g0 is positive definite");
    let n2 = w.dot(gi.mul_vec(w));
    let wn = w * (1.0 / n2.sqrt());
    g0.scale(alpha).add(&wn.outer(wn).scale(beta - alpha))
}

pub fn assemble_metric(rm: &RankOneMetric, x: Vec3) -> Result<Mat3, QshError> {
    let (a, b) = rm.alpha_beta(x);
    Ok(metric_from_parts(a, b, rm.axis_form(x)?, &rm.g0))
}

/// Result of [`extract_parameters`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extracted {
    pub alpha: f64,
    pub beta: f64,
    /// Axis one-form with unit dual `g0`-length; its largest-magnitude
    /// component is positive, so `w` and `−w` give the same answer.
    pub axis: Vec3,
}

/// Solve `g v = μ g0 v`: the doubled eigenvalue is `α`, the simple one `β`
/// and `g0 v_β` spans the axis.
pub fn extract_parameters(g: &Mat3, g0: &Mat3) -> Result<Extracted, QshError> {
    let l = g0.cholesky().ok_or(QshError::NotPositiveDefinite)?;
    let li = l.inverse(1e-14).ok_or(QshError::NotPositiveDefinite)?;
    let c = li.mul_mat(g).mul_mat(&li.transpose()).symmetrized();
    let (mu, y) = c.symmetric_eigen();
    if mu[0] <= 0.0 {
        return Err(QshError::NotPositiveDefinite);
    }
    let tol = PAIRING_TOL * (mu[0] + mu[1] + mu[2]);
    let low_pair = (mu[1] - mu[0]).abs() <= tol;
    let high_pair = (mu[2] - mu[1]).abs() <= tol;
    let (alpha, beta, k) = match (low_pair, high_pair) {
        (true, true) => return Err(QshError::ConformalPoint { alpha: (mu[0] + mu[1] + mu[2]) / 3.0 }),
        (true, false) => (0.5 * (mu[0] + mu[1]), mu[2], 2),
        (false, true) => (0.5 * (mu[1] + mu[2]), mu[0], 0),
        (false, false) => return Err(QshError::NotRankOne { eigs: mu }),
    };
    let v = li.transpose().mul_vec(y.col(k));
    let w = g0.mul_vec(v);
    let gi = g0.inverse(1e-14).ok_or(QshError::NotPositiveDefinite)?;
    let mut w = w * (1.0 / w.dot(gi.mul_vec(w)).sqrt());
    let imax = (0..3).max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs())).unwrap_or(0);
    if w[imax] < 0.0 {
        w = -w;
    }
    Ok(Extracted { alpha, beta, axis: w })
}

/// Planar patch `origin + u·e1 + v·e2` sampled on a regular lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedPatch {
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub u: (f64, f64),
    pub v: (f64, f64),
    pub n_u: usize,
    pub n_v: usize,
}

impl SeedPatch {
    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        self.origin + self.e1 * u + self.e2 * v
    }

    fn lattice(range: (f64, f64), n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |k| if n == 1 { range.0 } else { range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64 })
    }
}

/// Which gradient the chart transports along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMetric {
    Background,
    Qsh,
}

/// One chart sample: coordinates, position and Jacobian columns `∂x/∂y_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartSample {
    pub y: Vec3,
    pub x: Vec3,
    pub jacobian: Mat3,
    /// `|g(∂y_i, ∂y3)| / (|∂y_i|_g |∂y3|_g)` for `i = 1, 2`.
    pub residual: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoliationChart {
    pub seed: SeedPatch,
    pub samples: Vec<ChartSample>,
    pub max_residual: f64,
}

/// Gradient vector field normalized so that `df(V) = 1`, and its derivative.
fn flow_field(rm: &RankOneMetric, kind: FlowMetric, x: Vec3) -> Result<(Vec3, Mat3), QshError> {
    let gi = match kind {
        FlowMetric::Background => rm.g0.inverse(1e-14).ok_or(QshError::NotPositiveDefinite)?,
        FlowMetric::Qsh => assemble_metric(rm, x)?.inverse(1e-14).ok_or(QshError::NotPositiveDefinite)?,
    };
    let g = rm.layer.gradient(x);
    let n2 = g.dot(gi.mul_vec(g));
    if !(n2.sqrt() > ZERO_GRADIENT_TOL) {
        return Err(QshError::ZeroGradient { x });
    }
    let u = gi.mul_vec(g);
    let v = u * (1.0 / n2);
    let dv = match kind {
        FlowMetric::Background => {
            let h = rm.layer.hessian(x);
            // V = G∇f / (∇fᵀG∇f)
            let gh = gi.mul_mat(&h);
            let dn = h.mul_vec(u) * 2.0;
            gh.scale(1.0 / n2).sub(&u.outer(dn).scale(1.0 / (n2 * n2)))
        }
        FlowMetric::Qsh => {
            // G depends on x through α, β and w: central differences
            let hh = 1e-6 * (1.0 + x.norm());
            let mut cols = [Vec3::ZERO; 3];
            for (k, col) in cols.iter_mut().enumerate() {
                let e = Vec3::axis(k) * hh;
                let vp = flow_field_value(rm, kind, x + e)?;
                let vm = flow_field_value(rm, kind, x - e)?;
                *col = (vp - vm) * (0.5 / hh);
            }
            Mat3::from_cols(cols[0], cols[1], cols[2])
        }
    };
    Ok((v, dv))
}

fn flow_field_value(rm: &RankOneMetric, kind: FlowMetric, x: Vec3) -> Result<Vec3, QshError> {
    let gi = match kind {
        FlowMetric::Background => rm.g0.inverse(1e-14).ok_or(QshError::NotPositiveDefinite)?,
        FlowMetric::Qsh => assemble_metric(rm, x)?.inverse(1e-14).ok_or(QshError::NotPositiveDefinite)?,
    };
    let g = rm.layer.gradient(x);
    let u = gi.mul_vec(g);
    Ok(u * (1.0 / g.dot(u)))
}

/// Transversality threshold: `|cos|` between the flow and the patch normal.
pub const MIN_TRANSVERSALITY: f64 = 1e-3;

/// Build the chart `(y1, y2, y3) ↦ x` on the seed lattice times `y3_levels`.
///
/// The point with coordinates `(u, v, y3)` is reached from the seed point
/// `s(u, v)` by flowing along `V` (with `df(V) = 1`) for parameter
/// `y3 − f(s)`, so `f(x) = y3` holds exactly. Tangents `∂x/∂u`, `∂x/∂v` come
/// from the variational equation.
pub fn build_adapted_coordinates(
    rm: &RankOneMetric,
    seed: &SeedPatch,
    y3_levels: &[f64],
    kind: FlowMetric,
    opts: &OdeOptions,
) -> Result<FoliationChart, QshError> {
    let mut samples = Vec::new();
    let mut max_residual = 0.0f64;
    let normal = seed.e1.cross(seed.e2);
    for v in SeedPatch::lattice(seed.v, seed.n_v) {
        for u in SeedPatch::lattice(seed.u, seed.n_u) {
            let s = seed.point(u, v);
            let (v0, _) = flow_field(rm, kind, s)?;
            let cos = v0.dot(normal) / (v0.norm() * normal.norm());
            if cos.abs() < MIN_TRANSVERSALITY {
                return Err(QshError::TangencyError { x: s, cos });
            }
            let f0 = rm.layer.value(s);
            let grad0 = rm.layer.gradient(s);
            for &y3 in y3_levels {
                let (pos, a, b) = transport(rm, kind, s, [seed.e1, seed.e2], y3 - f0, opts)?;
                let (vx, _) = flow_field(rm, kind, pos)?;
                let du = a - vx * grad0.dot(seed.e1);
                let dv = b - vx * grad0.dot(seed.e2);
                let g = assemble_metric(rm, pos)?;
                let ip = |p: Vec3, q: Vec3| p.dot(g.mul_vec(q));
                let nv = ip(vx, vx).sqrt();
                let residual = [ip(du, vx).abs() / (ip(du, du).sqrt() * nv), ip(dv, vx).abs() / (ip(dv, dv).sqrt() * nv)];
                max_residual = max_residual.max(residual[0]).max(residual[1]);
                samples.push(ChartSample { y: Vec3([u, v, y3]), x: pos, jacobian: Mat3::from_cols(du, dv, vx), residual });
            }
        }
    }
    Ok(FoliationChart { seed: *seed, samples, max_residual })
}

/// Flow `s` for parameter `dt` together with two tangent vectors.
fn transport(
    rm: &RankOneMetric,
    kind: FlowMetric,
    s: Vec3,
    tangents: [Vec3; 2],
    dt: f64,
    opts: &OdeOptions,
) -> Result<(Vec3, Vec3, Vec3), QshError> {
    let sign = if dt < 0.0 { -1.0 } else { 1.0 };
    let mut y0 = [0.0; 9];
    y0[..3].copy_from_slice(&s.0);
    y0[3..6].copy_from_slice(&tangents[0].0);
    y0[6..9].copy_from_slice(&tangents[1].0);
    let rhs = |_: f64, y: &[f64; 9]| -> Result<[f64; 9], QshError> {
        let x = Vec3([y[0], y[1], y[2]]);
        let (v, dv) = flow_field(rm, kind, x)?;
        let a = dv.mul_vec(Vec3([y[3], y[4], y[5]]));
        let b = dv.mul_vec(Vec3([y[6], y[7], y[8]]));
        Ok([
            sign * v[0],
            sign * v[1],
            sign * v[2],
            sign * a[0],
            sign * a[1],
            sign * a[2],
            sign * b[0],
            sign * b[1],
            sign * b[2],
        ])
    };
    let y = ode::advance(rhs, y0, dt.abs(), opts).map_err(|_| QshError::FlowFailure { x: s })?;
    Ok((Vec3([y[0], y[1], y[2]]), Vec3([y[3], y[4], y[5]]), Vec3([y[6], y[7], y[8]])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Box3;
    use crate::material::ElasticParams;

    fn fields(alpha: f64, beta: f64, layer: ScalarField) -> RankOneMetric {
        RankOneMetric {
            coefficients: Coefficients::Fields { alpha: ScalarField::Constant(alpha), beta: ScalarField::Constant(beta) },
            layer,
            g0: Mat3::IDENTITY,
        }
    }

    #[test]
    fn assemble_examples() {
        let w = Vec3::new(0.3, -0.2, 0.9);
        let g = metric_from_parts(1.0, 1.0, w, &Mat3::IDENTITY);
        assert!(g.sub(&Mat3::IDENTITY).max_abs() < 1e-15);
        let g = metric_from_parts(1.0, 2.0, Vec3::axis(2), &Mat3::IDENTITY);
        assert_eq!(g, Mat3::diag([1.0, 1.0, 2.0]));
        let m = MaterialField::homogeneous(
            Box3::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
            ElasticParams::new(14.0, 2.0, 12.0, 4.0, 5.0),
            Vec3::axis(2),
        );
        let g = assemble_metric(&RankOneMetric::from_material(&m), Vec3::ZERO).unwrap();
        assert!(g.sub(&Mat3::diag([0.2, 0.2, 0.25])).max_abs() < 1e-15);
    }

    #[test]
    fn extract_examples() {
        let e = extract_parameters(&Mat3::diag([1.0, 1.0, 2.0]), &Mat3::IDENTITY).unwrap();
        assert!((e.alpha - 1.0).abs() < 1e-14 && (e.beta - 2.0).abs() < 1e-14);
        assert!((e.axis - Vec3::axis(2)).max_abs() < 1e-14);
        let w = Vec3::new(1.0, 0.0, 1.0);
        let g = metric_from_parts(0.2, 0.25, w, &Mat3::IDENTITY);
        let e = extract_parameters(&g, &Mat3::IDENTITY).unwrap();
        assert!((e.alpha - 0.2).abs() < 1e-14 && (e.beta - 0.25).abs() < 1e-14);
        assert!((e.axis - w * (1.0 / 2f64.sqrt())).max_abs() < 1e-12);
        assert_eq!(
            extract_parameters(&Mat3::IDENTITY.scale(3.0), &Mat3::IDENTITY),
            Err(QshError::ConformalPoint { alpha: 3.0 })
        );
    }

    #[test]
    fn extraction_ignores_sign_of_axis_and_handles_general_g0() {
        let g0 = Mat3([[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.0]]);
        let w = Vec3::new(0.4, -0.7, 0.2);
        let a = extract_parameters(&metric_from_parts(0.5, 0.3, w, &g0), &g0).unwrap();
        let b = extract_parameters(&metric_from_parts(0.5, 0.3, -w, &g0), &g0).unwrap();
        assert_eq!(a, b);
        assert!((a.alpha - 0.5).abs() < 1e-12 && (a.beta - 0.3).abs() < 1e-12);
        let back = metric_from_parts(a.alpha, a.beta, a.axis, &g0);
        assert!(back.sub(&metric_from_parts(0.5, 0.3, w, &g0)).max_abs() < 1e-12);
    }

    fn patch(n: usize) -> SeedPatch {
        SeedPatch { origin: Vec3::ZERO, e1: Vec3::axis(0), e2: Vec3::axis(1), u: (-0.5, 0.5), v: (-0.5, 0.5), n_u: n, n_v: n }
    }

    #[test]
    fn flat_layers_give_identity_chart() {
        let rm = fields(0.2, 0.25, ScalarField::Linear { coef: Vec3::axis(2), offset: 0.0 });
        let chart = build_adapted_coordinates(&rm, &patch(3), &[-0.3, 0.0, 0.4], FlowMetric::Background, &OdeOptions::default()).unwrap();
        for s in &chart.samples {
            assert!((s.x - s.y).max_abs() < 1e-12);
            assert!(s.jacobian.sub(&Mat3::IDENTITY).max_abs() < 1e-12);
        }
        assert!(chart.max_residual < 1e-12);
    }

    #[test]
    fn tilted_and_curved_layers_are_block_diagonal() {
        let opts = OdeOptions::default().with_tolerance(1e-12, 1e-14);
        let tilted = fields(0.2, 0.25, ScalarField::Linear { coef: Vec3::new(0.1, 0.0, 1.0), offset: 0.0 });
        let chart = build_adapted_coordinates(&tilted, &patch(4), &[-0.4, 0.2, 0.5], FlowMetric::Background, &opts).unwrap();
        assert!(chart.max_residual < 1e-6, "{}", chart.max_residual);
        for s in &chart.samples {
            assert!((tilted.layer.value(s.x) - s.y[2]).abs() < 1e-10);
        }
        let radial = fields(0.2, 0.25, ScalarField::Radial { center: Vec3::new(0.3, -0.2, -4.0), sign: 1.0, offset: -4.0 });
        let chart = build_adapted_coordinates(&radial, &patch(4), &[-0.2, 0.3], FlowMetric::Background, &opts).unwrap();
        assert!(chart.max_residual < 1e-6, "{}", chart.max_residual);
    }

    #[test]
    fn metric_gradient_flow_is_a_reparameterization() {
        let opts = OdeOptions::default().with_tolerance(1e-12, 1e-14);
        let bump = ScalarField::Gaussian { amplitude: 0.05, center: Vec3::ZERO, widths: Vec3::new(0.5, 0.5, 0.5) };
        let rm = RankOneMetric {
            coefficients: Coefficients::Fields { alpha: ScalarField::Constant(0.2).plus(bump), beta: ScalarField::Constant(0.25) },
            layer: ScalarField::Radial { center: Vec3::new(0.3, -0.2, -4.0), sign: 1.0, offset: -4.0 },
            g0: Mat3::IDENTITY,
        };
        let a = build_adapted_coordinates(&rm, &patch(3), &[0.3], FlowMetric::Background, &opts).unwrap();
        let b = build_adapted_coordinates(&rm, &patch(3), &[0.3], FlowMetric::Qsh, &opts).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert!((sa.x - sb.x).max_abs() < 1e-9);
        }
        assert!(b.max_residual < 1e-6);
    }

    #[test]
    fn tangent_seed_is_rejected() {
        let rm = fields(0.2, 0.25, ScalarField::Linear { coef: Vec3::axis(0), offset: 0.0 });
        let r = build_adapted_coordinates(&rm, &patch(2), &[0.1], FlowMetric::Background, &OdeOptions::default());
        assert!(matches!(r, Err(QshError::TangencyError { .. })));
    }
}
