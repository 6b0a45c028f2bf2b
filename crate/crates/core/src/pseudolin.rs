//! The pseudolinearization identity for two media `ν` and `ν̃`.
//!
//! For a ray `Z(s)` of `ν` with exit time `T`, and `Z̃` the flow of `ν̃`,
//!
//! ```text
//! Z(T) − Z̃(T, z0) = ∫₀ᵀ ∂Z̃/∂z (T−s, Z(s)) · (V − Ṽ)(Z(s)) ds
//! ```
//!
//! whose covector rows read `∫ (A ∂ₓf + B ∂_ξ f) ds` with `f = p − p̃`,
//! `A = −∂Ξ̃/∂ξ` and `B = ∂Ξ̃/∂x`. Writing `f = Σ_l f_l E^l` with
//! `f_l = ν_l − ν̃_l` turns it into a linear transform of the `f_l`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{Mat3, Vec3};
use crate::material::{self, MaterialError, MaterialField, Param, PhasePoint, Wave};
use crate::ode::OdeOptions;
use crate::quadrature::GaussLegendre;
use crate::raytrace::{self, Bicharacteristic, RayError, StopSurface, TraceOptions};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum PseudolinError {
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error("parameter segment leaves the admissible set at s={s}: {err}")]
    SegmentInadmissible { s: f64, err: MaterialError },
    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// Flow derivatives `∂Ξ̃/∂x` and `∂Ξ̃/∂ξ` of the reference medium at
/// `(T − t, Z(t))`, sampled at the times `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowJacobian {
    pub tau: f64,
    pub t: Vec<f64>,
    pub dxi_dx: Vec<Mat3>,
    pub dxi_dxi: Vec<Mat3>,
}

impl FlowJacobian {
    /// `A = −∂Ξ̃/∂ξ` at sample `k`.
    pub fn a(&self, k: usize) -> Mat3 {
        self.dxi_dxi[k].scale(-1.0)
    }

    /// `B = ∂Ξ̃/∂x` at sample `k`.
    pub fn b(&self, k: usize) -> Mat3 {
        self.dxi_dx[k]
    }
}

fn block(j: &[[f64; 6]; 6], r0: usize, c0: usize) -> Mat3 {
    let mut m = Mat3::ZERO;
    for i in 0..3 {
        for k in 0..3 {
            m[(i, k)] = j[r0 + i][c0 + k];
        }
    }
    m
}

/// `(∂Ξ̃/∂x, ∂Ξ̃/∂ξ)` after flowing `z` in `m_tilde` for time `dt`.
///
/// In a homogeneous reference medium covectors are conserved, so the pair
/// is `(0, I)` exactly.
pub fn covector_jacobian(
    m_tilde: &MaterialField,
    wave: Wave,
    z: PhasePoint,
    dt: f64,
    opts: &OdeOptions,
) -> Result<(Mat3, Mat3), RayError> {
    if m_tilde.is_homogeneous() || dt == 0.0 {
        return Ok((Mat3::ZERO, Mat3::IDENTITY));
    }
    let (_, j) = raytrace::flow_with_jacobian(m_tilde, wave, z, dt, opts)?;
    Ok((block(&j, 3, 0), block(&j, 3, 3)))
}

/// Flow Jacobians of `m_tilde` restarted from phase points `(t_k, Z(t_k))`
/// of a ray with exit time `tau`.
pub fn flow_jacobian_at(
    m_tilde: &MaterialField,
    wave: Wave,
    tau: f64,
    points: &[(f64, PhasePoint)],
    opts: &OdeOptions,
) -> Result<FlowJacobian, RayError> {
    let mut out = FlowJacobian { tau, t: Vec::new(), dxi_dx: Vec::new(), dxi_dxi: Vec::new() };
    for &(t, z) in points {
        let (bx, ax) = covector_jacobian(m_tilde, wave, z, tau - t, opts)?;
        out.t.push(t);
        out.dxi_dx.push(bx);
        out.dxi_dxi.push(ax);
    }
    Ok(out)
}

/// [`flow_jacobian_at`] on the integrator's own samples of `ray`.
pub fn flow_jacobian(
    m_tilde: &MaterialField,
    wave: Wave,
    ray: &Bicharacteristic,
    opts: &OdeOptions,
) -> Result<FlowJacobian, RayError> {
    let pts: Vec<(f64, PhasePoint)> = (0..ray.len()).map(|k| (ray.t[k], ray.point(k))).collect();
    flow_jacobian_at(m_tilde, wave, ray.duration(), &pts, opts)
}

/// Segment weights `E^l = ∫₀¹ ∂P/∂ν_l(sν + (1−s)ν̃) ds` for all five parameters,
/// indexed by [`Param::index`]. Both media must share the layer function.
pub fn e_weights(
    nu: &MaterialField,
    nu_tilde: &MaterialField,
    wave: Wave,
    pt: &PhasePoint,
    gl: &GaussLegendre,
) -> Result<[f64; 5], PseudolinError> {
    let a = nu.moduli(pt.x);
    let b = nu_tilde.moduli(pt.x);
    let mut out = [0.0; 5];
    for (s, w) in gl.on_interval(0.0, 1.0) {
        let mo = a.lerp(&b, s);
        let sens = material::sensitivities_with(nu, &mo, wave, pt).map_err(|err| PseudolinError::SegmentInadmissible { s, err })?;
        for p in Param::ALL {
            out[p.index()] += w * sens.get(p);
        }
    }
    Ok(out)
}

/// Composite Gauss–Legendre nodes along a ray: `(t, weight, Z(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RayNodes {
    pub tau: f64,
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<PhasePoint>,
}

/// Nodes of an order-`gl.len()` rule on every integrator step of `ray`.
///
/// Node states are obtained by re-integrating from the step's start point.
pub fn ray_nodes(
    m: &MaterialField,
    wave: Wave,
    ray: &Bicharacteristic,
    gl: &GaussLegendre,
    opts: &OdeOptions,
) -> Result<RayNodes, RayError> {
    let mut out = RayNodes { tau: ray.duration(), t: Vec::new(), w: Vec::new(), z: Vec::new() };
    for k in 0..ray.len().saturating_sub(1) {
        let (a, b) = (ray.t[k], ray.t[k + 1]);
        if b <= a {
            continue;
        }
        let start = ray.point(k);
        for (t, w) in gl.on_interval(a, b) {
            let z = raytrace::flow_for_time(m, wave, start, t - a, opts)?;
            out.t.push(t);
            out.w.push(w);
            out.z.push(z);
        }
    }
    Ok(out)
}

/// Left side of the identity and the exit-covector oracle for one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuResidual {
    pub tau: f64,
    /// `J_i f(γ)` for `i = 1..3`.
    pub j: Vec3,
    /// `Ξ(τ) − Ξ̃(τ)` from the same entry point.
    pub oracle: Vec3,
}

impl SuResidual {
    pub fn abs_error(&self) -> f64 {
        (self.j - self.oracle).norm()
    }

    /// Error relative to the size of the oracle (absolute when it vanishes).
    pub fn rel_error(&self) -> f64 {
        let n = self.oracle.norm();
        if n > 0.0 {
            self.abs_error() / n
        } else {
            self.abs_error()
        }
    }
}

/// Settings shared by the identity evaluators.
#[derive(Debug, Clone)]
pub struct SuSettings {
    pub trace: TraceOptions,
    /// Tolerances for node restarts and variational flows.
    pub flow: OdeOptions,
    pub gl: GaussLegendre,
    /// Rule for the parameter-segment integral.
    pub segment_gl: GaussLegendre,
}

impl Default for SuSettings {
    fn default() -> Self {
        let ode = OdeOptions::default().with_tolerance(1e-12, 1e-14);
        SuSettings {
            trace: TraceOptions { ode, ..TraceOptions::default() },
            flow: ode,
            gl: GaussLegendre::new(8),
            segment_gl: GaussLegendre::new(16),
        }
    }
}

/// Evaluate `J_i f(γ)` for the ray of `nu` entering at `entry`, and the oracle.
///
/// The reference flow is run for the exit time `τ` of the `nu` ray, which is
/// the time at which the identity holds exactly.
pub fn su_identity_residual(
    nu: &MaterialField,
    nu_tilde: &MaterialField,
    wave: Wave,
    entry: PhasePoint,
    stops: &[StopSurface],
    set: &SuSettings,
) -> Result<SuResidual, PseudolinError> {
    let ray = raytrace::integrate_flow(nu, wave, entry, stops, &set.trace)?;
    let tau = ray.duration();
    let ref_end = raytrace::flow_for_time(nu_tilde, wave, entry, tau, &set.flow)?;
    let oracle = ray.end().xi - ref_end.xi;
    let nodes = ray_nodes(nu, wave, &ray, &set.gl, &set.flow)?;
    let mut j = Vec3::ZERO;
    for k in 0..nodes.t.len() {
        let z = nodes.z[k];
        let (dx, dxi) = material::hamiltonian_derivs(nu, wave, &z)?;
        let (dx_t, dxi_t) = material::hamiltonian_derivs(nu_tilde, wave, &z)?;
        let (bx, ax) = covector_jacobian(nu_tilde, wave, z, tau - nodes.t[k], &set.flow)?;
        // A ∂ₓf + B ∂_ξ f with A = −∂Ξ̃/∂ξ, B = ∂Ξ̃/∂x
        let integrand = bx.mul_vec(dxi - dxi_t) - ax.mul_vec(dx - dx_t);
        j += integrand * nodes.w[k];
    }
    Ok(SuResidual { tau, j, oracle })
}

/// Weights of the modified identity at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifiedWeights {
    /// `Â^{jl}_i = A^j_i E^l`: entry `[l][(i, j)]`.
    pub a_hat: [Mat3; 5],
    /// `B̂^l_i = A^j_i ∂_{x_j} E^l + B_ij ∂_{ξ_j} E^l`: entry `[l][i]`.
    pub b_hat: [Vec3; 5],
}

/// Modified weights from `A`, `B` and the segment weights, whose derivatives
/// are central differences with relative step `1e-6`.
pub fn modified_weights(
    nu: &MaterialField,
    nu_tilde: &MaterialField,
    wave: Wave,
    z: &PhasePoint,
    a: &Mat3,
    b: &Mat3,
    gl: &GaussLegendre,
) -> Result<ModifiedWeights, PseudolinError> {
    let e0 = e_weights(nu, nu_tilde, wave, z, gl)?;
    let mut de_dx = [[0.0; 3]; 5];
    let mut de_dxi = [[0.0; 3]; 5];
    let hx = 1e-6 * (1.0 + z.x.norm());
    let hxi = 1e-6 * z.xi.norm();
    for k in 0..3 {
        let mut zp = *z;
        let mut zm = *z;
        zp.x[k] += hx;
        zm.x[k] -= hx;
        let (ep, em) = (e_weights(nu, nu_tilde, wave, &zp, gl)?, e_weights(nu, nu_tilde, wave, &zm, gl)?);
        let mut zp2 = *z;
        let mut zm2 = *z;
        zp2.xi[k] += hxi;
        zm2.xi[k] -= hxi;
        let (ep2, em2) = (e_weights(nu, nu_tilde, wave, &zp2, gl)?, e_weights(nu, nu_tilde, wave, &zm2, gl)?);
        for l in 0..5 {
            de_dx[l][k] = (ep[l] - em[l]) / (2.0 * hx);
            de_dxi[l][k] = (ep2[l] - em2[l]) / (2.0 * hxi);
        }
    }
    let mut out = ModifiedWeights { a_hat: [Mat3::ZERO; 5], b_hat: [Vec3::ZERO; 5] };
    for l in 0..5 {
        out.a_hat[l] = a.scale(e0[l]);
        out.b_hat[l] = a.mul_vec(Vec3(de_dx[l])) + b.mul_vec(Vec3(de_dxi[l]));
    }
    Ok(out)
}

/// Gradient of `f_l = ν_l − ν̃_l` at `x`.
pub fn param_diff_gradient(nu: &MaterialField, nu_tilde: &MaterialField, l: Param, x: Vec3) -> Vec3 {
    nu.moduli_gradients(x)[l.index()] - nu_tilde.moduli_gradients(x)[l.index()]
}

/// `f_l(x) = ν_l(x) − ν̃_l(x)`.
pub fn param_diff(nu: &MaterialField, nu_tilde: &MaterialField, l: Param, x: Vec3) -> f64 {
    nu.moduli(x).get(l) - nu_tilde.moduli(x).get(l)
}

/// The modified identity `Σ_l ∫ (Â^{jl}_i ∂_j f_l + B̂^l_i f_l) dt`; equals
/// [`su_identity_residual`]'s `j` when both media share the layer function.
pub fn modified_identity(
    nu: &MaterialField,
    nu_tilde: &MaterialField,
    wave: Wave,
    entry: PhasePoint,
    stops: &[StopSurface],
    set: &SuSettings,
) -> Result<Vec3, PseudolinError> {
    let ray = raytrace::integrate_flow(nu, wave, entry, stops, &set.trace)?;
    let tau = ray.duration();
    let nodes = ray_nodes(nu, wave, &ray, &set.gl, &set.flow)?;
    let mut j = Vec3::ZERO;
    for k in 0..nodes.t.len() {
        let z = nodes.z[k];
        let (bx, ax) = covector_jacobian(nu_tilde, wave, z, tau - nodes.t[k], &set.flow)?;
        let mw = modified_weights(nu, nu_tilde, wave, &z, &ax.scale(-1.0), &bx, &set.segment_gl)?;
        for l in Param::ALL {
            let grad = param_diff_gradient(nu, nu_tilde, l, z.x);
            let f = param_diff(nu, nu_tilde, l, z.x);
            j += (mw.a_hat[l.index()].mul_vec(grad) + mw.b_hat[l.index()] * f) * nodes.w[k];
        }
    }
    Ok(j)
}

/// `J̃ = ∫ Ã^l(t) ∂_j f_l(X(t)) dt` with `Ã^l = −(∂Ξ̃_j/∂ξ_j)·E^l`, for one
/// parameter `l` and one fixed component `j`, along the ray of `nu` from `entry`.
#[allow(clippy::too_many_arguments)]
pub fn simplified_transform(
    nu: &MaterialField,
    nu_tilde: &MaterialField,
    wave: Wave,
    l: Param,
    j: usize,
    entry: PhasePoint,
    stops: &[StopSurface],
    set: &SuSettings,
) -> Result<f64, PseudolinError> {
    let ray = raytrace::integrate_flow(nu, wave, entry, stops, &set.trace)?;
    let tau = ray.duration();
    let nodes = ray_nodes(nu, wave, &ray, &set.gl, &set.flow)?;
    let mut acc = 0.0;
    for k in 0..nodes.t.len() {
        let z = nodes.z[k];
        let grad = param_diff_gradient(nu, nu_tilde, l, z.x);
        if grad[j] == 0.0 {
            continue;
        }
        let (_, ax) = covector_jacobian(nu_tilde, wave, z, tau - nodes.t[k], &set.flow)?;
        let e = e_weights(nu, nu_tilde, wave, &z, &set.segment_gl)?;
        acc += -ax[(j, j)] * e[l.index()] * grad[j] * nodes.w[k];
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Box3, ScalarField};
    use crate::material::ElasticParams;

    const M0: ElasticParams = ElasticParams::new(14.0, 2.0, 12.0, 4.0, 5.0);

    fn domain() -> Box3 {
        Box3::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0))
    }

    fn base() -> MaterialField {
        MaterialField::homogeneous(domain(), M0, Vec3::new(0.3, 0.0, 1.0)).with_e2_coupling().unwrap()
    }

    fn bump(a: f64, c: Vec3, w: f64) -> ScalarField {
        ScalarField::Gaussian { amplitude: a, center: c, widths: Vec3::new(w, w, w) }
    }

    fn pair() -> (MaterialField, MaterialField) {
        let nu_tilde = base().perturbed(Param::A11, bump(0.3, Vec3::new(0.1, 0.1, 0.0), 0.35));
        let nu = nu_tilde
            .perturbed(Param::A11, bump(0.2, Vec3::new(-0.1, 0.0, 0.1), 0.3))
            .perturbed(Param::E2, bump(-1.0, Vec3::new(0.1, -0.1, -0.1), 0.3))
            .perturbed(Param::A33, bump(0.15, Vec3::new(0.0, 0.1, 0.0), 0.3));
        (nu, nu_tilde)
    }

    fn entry(m: &MaterialField, w: Wave, y: f64, z: f64, dir: Vec3) -> PhasePoint {
        raytrace::normalize_covector(m, w, PhasePoint::new(Vec3::new(-1.0, y, z), dir)).unwrap()
    }

    #[test]
    fn e_weights_match_sensitivities_for_equal_media() {
        let m = base();
        let pt = PhasePoint::new(Vec3::ZERO, m.tilt_frame(Vec3::ZERO).unwrap().covector_from_tilted(Vec3::new(1.0, 0.0, 1.0)));
        let e = e_weights(&m, &m, Wave::QP, &pt, &GaussLegendre::new(8)).unwrap();
        assert!((e[Param::E2.index()] + 2.0 / 148f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn e_weights_satisfy_the_fundamental_theorem() {
        let (nu, nu_tilde) = pair();
        let gl = GaussLegendre::new(16);
        for (k, w) in [Wave::QP, Wave::QSV, Wave::QSH].into_iter().enumerate() {
            let x = Vec3::new(-0.1 + 0.05 * k as f64, 0.02, 0.05);
            let pt = PhasePoint::new(x, Vec3::new(0.3, -0.5, 0.8));
            let e = e_weights(&nu, &nu_tilde, w, &pt, &gl).unwrap();
            let lhs = material::hamiltonian(&nu, w, &pt).unwrap() - material::hamiltonian(&nu_tilde, w, &pt).unwrap();
            let rhs: f64 = Param::ALL.iter().map(|&l| param_diff(&nu, &nu_tilde, l, x) * e[l.index()]).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1e-3), "{w} {lhs} {rhs}");
        }
    }

    #[test]
    fn qsh_segment_weights_are_endpoint_means() {
        // P is linear in a55 and a66 for qSH, so E^l is the endpoint mean
        let (nu, nu_tilde) = pair();
        let pt = PhasePoint::new(Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.6, 0.3));
        let e = e_weights(&nu, &nu_tilde, Wave::QSH, &pt, &GaussLegendre::new(4)).unwrap();
        let a = material::material_sensitivities(&nu, Wave::QSH, &pt).unwrap();
        let b = material::material_sensitivities(&nu_tilde, Wave::QSH, &pt).unwrap();
        assert!((e[Param::A66.index()] - 0.5 * (a.da66 + b.da66)).abs() < 1e-14);
    }

    #[test]
    fn identical_media_have_zero_residual() {
        let (_, nu_tilde) = pair();
        let stops = [StopSurface::Box(domain())];
        let pt = entry(&nu_tilde, Wave::QP, 0.1, 0.0, Vec3::new(1.0, 0.0, 0.1));
        let r = su_identity_residual(&nu_tilde, &nu_tilde, Wave::QP, pt, &stops, &SuSettings::default()).unwrap();
        assert!(r.j.norm() < 1e-12 && r.oracle.norm() < 1e-12);
    }

    #[test]
    fn identity_matches_exit_covector_difference() {
        let (nu, nu_tilde) = pair();
        let stops = [StopSurface::Box(domain())];
        for w in [Wave::QP, Wave::QSV] {
            let pt = entry(&nu, w, 0.05, -0.05, Vec3::new(1.0, 0.1, 0.15));
            let r = su_identity_residual(&nu, &nu_tilde, w, pt, &stops, &SuSettings::default()).unwrap();
            assert!(r.oracle.norm() > 1e-3, "{w} {r:?}");
            assert!(r.rel_error() < 1e-6, "{w} {r:?} {}", r.rel_error());
        }
    }

    #[test]
    fn modified_identity_agrees() {
        let (nu, nu_tilde) = pair();
        let stops = [StopSurface::Box(domain())];
        let set = SuSettings { gl: GaussLegendre::new(4), ..SuSettings::default() };
        let pt = entry(&nu, Wave::QP, 0.05, 0.0, Vec3::new(1.0, 0.0, 0.1));
        let r = su_identity_residual(&nu, &nu_tilde, Wave::QP, pt, &stops, &set).unwrap();
        let jm = modified_identity(&nu, &nu_tilde, Wave::QP, pt, &stops, &set).unwrap();
        assert!((jm - r.j).norm() < 1e-6 * r.j.norm(), "{jm:?} {:?}", r.j);
    }

    #[test]
    fn boundary_weights() {
        let (nu, nu_tilde) = pair();
        let stops = [StopSurface::Box(domain())];
        let pt = entry(&nu, Wave::QP, 0.0, 0.0, Vec3::new(1.0, 0.2, 0.1));
        let ray = raytrace::integrate_flow(&nu, Wave::QP, pt, &stops, &SuSettings::default().trace).unwrap();
        let fj = flow_jacobian(&nu_tilde, Wave::QP, &ray, &SuSettings::default().flow).unwrap();
        let k = fj.t.len() - 1;
        assert!(fj.a(k).add(&Mat3::IDENTITY).max_abs() < 1e-8);
        assert!(fj.b(k).max_abs() < 1e-8);
        // and the reference flow is genuinely non-trivial in the interior
        assert!(fj.a(0).add(&Mat3::IDENTITY).max_abs() > 1e-4);
        let z = ray.end();
        let mw = modified_weights(&nu, &nu_tilde, Wave::QP, &z, &fj.a(k), &fj.b(k), &GaussLegendre::new(8)).unwrap();
        let e = e_weights(&nu, &nu_tilde, Wave::QP, &z, &GaussLegendre::new(8)).unwrap();
        for l in Param::ALL {
            assert!(mw.a_hat[l.index()].add(&Mat3::IDENTITY.scale(e[l.index()])).max_abs() < 1e-8);
        }
    }

    #[test]
    fn simplified_transform_examples() {
        let m = base();
        let stops = [StopSurface::Box(domain())];
        let set = SuSettings::default();
        let pt = entry(&m, Wave::QP, 0.05, 0.0, Vec3::new(1.0, 0.1, 0.05));
        assert_eq!(simplified_transform(&m, &m, Wave::QP, Param::A11, 0, pt, &stops, &set).unwrap(), 0.0);
        // homogeneous reference, tiny bump: −E ∫ ∂_j f dt along the (near) straight ray
        let b = bump(1e-6, Vec3::new(0.0, 0.1, 0.05), 0.3);
        let nu = m.perturbed(Param::A11, b.clone());
        for j in 0..3 {
            let got = simplified_transform(&nu, &m, Wave::QP, Param::A11, j, pt, &stops, &set).unwrap();
            let e = material::material_sensitivities(&m, Wave::QP, &pt).unwrap().da11;
            let v = raytrace::hamilton_map(&m, Wave::QP, pt.x, pt.xi).unwrap();
            let ray = raytrace::integrate_flow(&m, Wave::QP, pt, &stops, &set.trace).unwrap();
            let want = -e * GaussLegendre::new(64).integrate(0.0, ray.duration(), |t| b.gradient(pt.x + v * t)[j]);
            assert!((got - want).abs() < 1e-6 * want.abs().max(1e-9), "{j} {got} {want}");
        }
    }

    #[test]
    fn transform_is_linear_in_the_difference() {
        let m = base();
        let stops = [StopSurface::Box(domain())];
        let set = SuSettings::default();
        let pt = entry(&m, Wave::QSV, 0.0, 0.1, Vec3::new(1.0, -0.1, 0.0));
        let b = bump(1e-3, Vec3::new(0.0, 0.0, 0.05), 0.3);
        let one = simplified_transform(&m.perturbed(Param::A11, b.clone()), &m, Wave::QSV, Param::A11, 2, pt, &stops, &set).unwrap();
        let two = simplified_transform(&m.perturbed(Param::A11, b.scaled(2.0)), &m, Wave::QSV, Param::A11, 2, pt, &stops, &set).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-2 * one.abs(), "{one} {two}");
    }
}
