//! Bicharacteristics of the TI Hamiltonians and what is measured from them.
//!
//! The flow is Hamilton's system `ẋ = ∂p/∂ξ`, `ξ̇ = −∂p/∂x` on the six-vector
//! `(x, ξ)`. Stop surfaces are signed functions, positive inside; a ray stops
//! the first time one of them becomes non-positive.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::field::{Box3, ScalarField};
use crate::linalg::{Mat3, Vec3};
use crate::material::{self, MaterialError, MaterialField, PhasePoint, Wave};
use crate::ode::{self, EventFn, OdeError, OdeOptions, Stop};

/// A surface that terminates rays. `value > 0` on the side rays travel in.
#[derive(Debug, Clone, PartialEq)]
pub enum StopSurface {
    /// `inward · (x − point)`.
    Plane { point: Vec3, inward: Vec3 },
    /// Smallest per-face margin of a box.
    Box(Box3),
    /// `sign · (f(x) − level)`.
    Level { field: ScalarField, level: f64, sign: f64 },
}

impl StopSurface {
    pub fn value(&self, x: Vec3) -> f64 {
        match self {
            StopSurface::Plane { point, inward } => inward.dot(x - *point),
            StopSurface::Box(b) => b.margin(x),
            StopSurface::Level { field, level, sign } => sign * (field.value(x) - level),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    pub ode: OdeOptions,
    /// Rays that have not met a stop surface by this time fail.
    pub max_time: f64,
    /// Allowed relative Hamiltonian drift along a ray.
    pub drift_tol: f64,
    /// Tolerance halvings attempted when the drift is too large.
    pub max_refinements: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { ode: OdeOptions::default(), max_time: 100.0, drift_tol: 1e-8, max_refinements: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum RayError {
    #[error("ray entered a degenerate region: {0}")]
    DiscriminantHit(MaterialError),
    #[error("ray did not reach a stop surface before t={t}")]
    MaxTimeExceeded { t: f64 },
    #[error("Hamiltonian must be positive at the start (got {p})")]
    NonpositiveHamiltonian { p: f64 },
    #[error("Hamiltonian drift {drift:e} exceeds tolerance after refinement")]
    DriftExceeded { drift: f64 },
    #[error("integrator failure at t={t}")]
    Integrator { t: f64 },
}

impl From<MaterialError> for RayError {
    fn from(e: MaterialError) -> Self {
        RayError::DiscriminantHit(e)
    }
}

impl From<OdeError<MaterialError>> for RayError {
    fn from(e: OdeError<MaterialError>) -> Self {
        match e {
            OdeError::Rhs { err, .. } => RayError::DiscriminantHit(err),
            OdeError::MaxSteps { t } | OdeError::StepUnderflow { t } => RayError::Integrator { t },
        }
    }
}

/// Sampled trajectory `(t, X(t), Ξ(t))` of one Hamiltonian flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Bicharacteristic {
    pub wave: Wave,
    pub p0: f64,
    pub t: Vec<f64>,
    pub x: Vec<Vec3>,
    pub xi: Vec<Vec3>,
    /// Index of the stop surface that ended the ray, if any.
    pub exit_surface: Option<usize>,
    /// Largest `|p − p0| / p0` over the samples.
    pub drift: f64,
}

impl Bicharacteristic {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn point(&self, k: usize) -> PhasePoint {
        PhasePoint::new(self.x[k], self.xi[k])
    }

    pub fn start(&self) -> PhasePoint {
        self.point(0)
    }

    pub fn end(&self) -> PhasePoint {
        self.point(self.len() - 1)
    }

    pub fn duration(&self) -> f64 {
        self.t[self.len() - 1] - self.t[0]
    }
}

fn pack(pt: &PhasePoint) -> [f64; 6] {
    [pt.x[0], pt.x[1], pt.x[2], pt.xi[0], pt.xi[1], pt.xi[2]]
}

fn unpack(y: &[f64; 6]) -> PhasePoint {
    PhasePoint::new(Vec3([y[0], y[1], y[2]]), Vec3([y[3], y[4], y[5]]))
}

/// Hamilton vector field `(∂p/∂ξ, −∂p/∂x)` at a phase point.
pub fn hamilton_field(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<(Vec3, Vec3), MaterialError> {
    let (dx, dxi) = material::hamiltonian_derivs(m, wave, pt)?;
    Ok((dxi, -dx))
}

fn rhs6(m: &MaterialField, wave: Wave) -> impl FnMut(f64, &[f64; 6]) -> Result<[f64; 6], MaterialError> + '_ {
    move |_, y| {
        let (v, f) = hamilton_field(m, wave, &unpack(y))?;
        Ok([v[0], v[1], v[2], f[0], f[1], f[2]])
    }
}

/// Integrate the flow from `start` until a stop surface is crossed.
///
/// With no stop surfaces the ray runs for exactly `opts.max_time`.
pub fn integrate_flow(
    m: &MaterialField,
    wave: Wave,
    start: PhasePoint,
    stops: &[StopSurface],
    opts: &TraceOptions,
) -> Result<Bicharacteristic, RayError> {
    let p0 = material::hamiltonian(m, wave, &start)?;
    if !(p0 > 0.0) {
        return Err(RayError::NonpositiveHamiltonian { p: p0 });
    }
    let closures: Vec<_> = stops.iter().map(|s| move |y: &[f64; 6]| s.value(Vec3([y[0], y[1], y[2]]))).collect();
    let events: Vec<EventFn<'_, 6>> = closures.iter().map(|c| c as EventFn<'_, 6>).collect();
    let mut ode_opts = opts.ode;
    let mut drift = f64::INFINITY;
    for _ in 0..=opts.max_refinements {
        let sol = ode::integrate(rhs6(m, wave), 0.0, pack(&start), opts.max_time, &events, &ode_opts)?;
        let exit_surface = match sol.stop {
            Stop::Event(k) => Some(k),
            Stop::EndTime if stops.is_empty() => None,
            Stop::EndTime => return Err(RayError::MaxTimeExceeded { t: opts.max_time }),
        };
        let pts: Vec<PhasePoint> = sol.y.iter().map(unpack).collect();
        drift = 0.0;
        for pt in &pts {
            let p = material::hamiltonian(m, wave, pt)?;
            drift = drift.max((p - p0).abs() / p0);
        }
        if drift <= opts.drift_tol {
            return Ok(Bicharacteristic {
                wave,
                p0,
                t: sol.t,
                x: pts.iter().map(|p| p.x).collect(),
                xi: pts.iter().map(|p| p.xi).collect(),
                exit_surface,
                drift,
            });
        }
        ode_opts.rtol *= 0.5;
        ode_opts.atol *= 0.5;
    }
    Err(RayError::DriftExceeded { drift })
}

/// Phase point reached after flowing for time `dt` (ignores every surface).
pub fn flow_for_time(
    m: &MaterialField,
    wave: Wave,
    start: PhasePoint,
    dt: f64,
    opts: &OdeOptions,
) -> Result<PhasePoint, RayError> {
    if dt == 0.0 {
        return Ok(start);
    }
    if dt < 0.0 {
        // reversed flow: p is even in ξ, so run forward from (x, −ξ)
        let back = flow_for_time(m, wave, PhasePoint::new(start.x, -start.xi), -dt, opts)?;
        return Ok(PhasePoint::new(back.x, -back.xi));
    }
    Ok(unpack(&ode::advance(rhs6(m, wave), pack(&start), dt, opts)?))
}

/// Derivative of the Hamilton vector field with respect to `(x, ξ)`.
///
/// The ξ-columns use the analytic ξ-Hessian; the x-columns are central
/// differences of the analytic field with step `1e-5·(1 + |x|)`.
pub fn field_jacobian(m: &MaterialField, wave: Wave, pt: &PhasePoint) -> Result<[[f64; 6]; 6], MaterialError> {
    let mut j = [[0.0; 6]; 6];
    let h = 1e-5 * (1.0 + pt.x.norm());
    for k in 0..3 {
        let mut xp = *pt;
        xp.x[k] += h;
        let mut xm = *pt;
        xm.x[k] -= h;
        let (vp, fp) = hamilton_field(m, wave, &xp)?;
        let (vm, fm) = hamilton_field(m, wave, &xm)?;
        for i in 0..3 {
            j[i][k] = (vp[i] - vm[i]) / (2.0 * h);
            j[3 + i][k] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let hxx = material::ambient_xi_hessian(m, wave, pt)?;
    // ∂(−∂p/∂x)/∂ξ = −(∂(∂p/∂ξ)/∂x)ᵀ by symmetry of second derivatives
    for i in 0..3 {
        for k in 0..3 {
            j[i][3 + k] = hxx[(i, k)];
            j[3 + i][3 + k] = -j[k][i];
        }
    }
    Ok(j)
}

/// Flow map and its 6×6 derivative after time `dt`, by the variational equation.
///
/// Rows/columns are ordered `(x, ξ)`.
pub fn flow_with_jacobian(
    m: &MaterialField,
    wave: Wave,
    start: PhasePoint,
    dt: f64,
    opts: &OdeOptions,
) -> Result<(PhasePoint, [[f64; 6]; 6]), RayError> {
    let mut y0 = [0.0; 42];
    y0[..6].copy_from_slice(&pack(&start));
    for i in 0..6 {
        y0[6 + 7 * i] = 1.0;
    }
    let rhs = |_: f64, y: &[f64; 42]| -> Result<[f64; 42], MaterialError> {
        let z: [f64; 6] = y[..6].try_into().expect("six-vector");
        let pt = unpack(&z);
        let (v, f) = hamilton_field(m, wave, &pt)?;
        let jac = field_jacobian(m, wave, &pt)?;
        let mut out = [0.0; 42];
        out[..3].copy_from_slice(&v.0);
        out[3..6].copy_from_slice(&f.0);
        for i in 0..6 {
            for k in 0..6 {
                let mut acc = 0.0;
                for l in 0..6 {
                    acc += jac[i][l] * y[6 + 6 * l + k];
                }
                out[6 + 6 * i + k] = acc;
            }
        }
        Ok(out)
    };
    // only the phase-space part drives the step size
    let var_opts = OdeOptions { atol: opts.atol.max(1e-10), ..*opts };
    let y = ode::advance(rhs, y0, dt, &var_opts)?;
    let mut jac = [[0.0; 6]; 6];
    for i in 0..6 {
        for k in 0..6 {
            jac[i][k] = y[6 + 6 * i + k];
        }
    }
    let z: [f64; 6] = y[..6].try_into().expect("six-vector");
    Ok((unpack(&z), jac))
}

/// Rescale `ξ` so that `p(x, ξ) = 1`.
pub fn normalize_covector(m: &MaterialField, wave: Wave, pt: PhasePoint) -> Result<PhasePoint, RayError> {
    let p = material::hamiltonian(m, wave, &pt)?;
    if !(p > 0.0) {
        return Err(RayError::NonpositiveHamiltonian { p });
    }
    Ok(PhasePoint::new(pt.x, pt.xi * (1.0 / p.sqrt())))
}

/// Entry and exit data of one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensRecord {
    pub entry: PhasePoint,
    pub exit: PhasePoint,
    pub tau: f64,
    pub exit_surface: usize,
}

/// Entry covectors (normalized to `p = 1`) and the surfaces that end rays.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingSpec {
    pub entries: Vec<PhasePoint>,
    pub stops: Vec<StopSurface>,
}

/// Lens records in fan order; rays that failed are listed separately.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LensRelation {
    pub records: Vec<(usize, LensRecord)>,
    pub failures: Vec<(usize, RayError)>,
}

pub fn lens_record(
    m: &MaterialField,
    wave: Wave,
    entry: PhasePoint,
    stops: &[StopSurface],
    opts: &TraceOptions,
) -> Result<LensRecord, RayError> {
    let ray = integrate_flow(m, wave, entry, stops, opts)?;
    Ok(LensRecord {
        entry,
        exit: ray.end(),
        tau: ray.duration(),
        exit_surface: ray.exit_surface.expect("rays with stop surfaces end on one"),
    })
}

pub fn lens_relation(m: &MaterialField, wave: Wave, spec: &ShootingSpec, opts: &TraceOptions) -> LensRelation {
    let mut out = LensRelation::default();
    for (k, e) in spec.entries.iter().enumerate() {
        match lens_record(m, wave, *e, &spec.stops, opts) {
            Ok(r) => out.records.push((k, r)),
            Err(err) => out.failures.push((k, err)),
        }
    }
    out
}

/// The Hamilton map `ξ ↦ ∂p/∂ξ` at `x`.
pub fn hamilton_map(m: &MaterialField, wave: Wave, x: Vec3, xi: Vec3) -> Result<Vec3, MaterialError> {
    Ok(material::hamiltonian_derivs(m, wave, &PhasePoint::new(x, xi))?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum InversionError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("ξ-Hessian is singular at the seed or iterate")]
    SingularHessian,
    #[error("Newton iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("target velocity is zero")]
    ZeroVelocity,
}

const NEWTON_TOL: f64 = 1e-13;

/// Solve `H_x(ξ) = v` by damped Newton from `seed`.
///
/// Degree-one homogeneity of `H_x` reduces the problem to the unit target
/// `v/|v|`; the seed is first rescaled so that `|H_x(seed)| = 1`.
pub fn invert_hamilton_map(
    m: &MaterialField,
    wave: Wave,
    x: Vec3,
    v: Vec3,
    seed: Vec3,
) -> Result<Vec3, InversionError> {
    let speed = v.norm();
    if !(speed > 0.0) {
        return Err(InversionError::ZeroVelocity);
    }
    let target = v * (1.0 / speed);
    let eval = |xi: Vec3| material::hamilton_map_jet(m, wave, &PhasePoint::new(x, xi));
    let (h0, _) = eval(seed)?;
    let n0 = h0.norm();
    if !(n0 > 0.0) {
        return Err(InversionError::SingularHessian);
    }
    let mut xi = seed * (1.0 / n0);
    let (mut h, mut jac) = eval(xi)?;
    let mut res = (h - target).norm();
    for _ in 0..100 {
        if res < NEWTON_TOL {
            return Ok(xi * speed);
        }
        let scale = jac.max_abs();
        let step = jac.solve(target - h, 1e-12).ok_or(InversionError::SingularHessian)?;
        if !(scale > 0.0) {
            return Err(InversionError::SingularHessian);
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = xi + step * lambda;
            if let Ok((hc, jc)) = eval(cand) {
                let rc = (hc - target).norm();
                if rc < res * (1.0 - 1e-4 * lambda) || rc < NEWTON_TOL {
                    xi = cand;
                    h = hc;
                    jac = jc;
                    res = rc;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res < 1e-11 {
        Ok(xi * speed)
    } else {
        Err(InversionError::NoConvergence { residual: res })
    }
}

/// Unit vectors of the 26-point stencil `{−1, 0, 1}³ \ {0}`, in fixed order.
pub fn stencil26() -> Vec<Vec3> {
    let mut out = Vec::with_capacity(26);
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if (i, j, k) != (0, 0, 0) {
                    let v = Vec3([i as f64, j as f64, k as f64]);
                    out.push(v * (1.0 / v.norm()));
                }
            }
        }
    }
    out
}

/// Every distinct solution of `H_x(ξ) = v` reached from the 26 stencil seeds,
/// in seed order.
pub fn invert_all(m: &MaterialField, wave: Wave, x: Vec3, v: Vec3) -> Vec<Vec3> {
    let mut found: Vec<Vec3> = Vec::new();
    for seed in stencil26() {
        if let Ok(xi) = invert_hamilton_map(m, wave, x, v, seed) {
            if !found.iter().any(|f| (*f - xi).norm() <= 1e-7 * xi.norm()) {
                found.push(xi);
            }
        }
    }
    found
}

/// `(d/dt, d²/dt²)` of `f(X(t))` at `t = 0` for the ray through `pt`.
///
/// Uses `ẍ = (∂H/∂x)·ẋ + (∂H/∂ξ)·ξ̇`; the x-derivative of the Hamilton map is
/// a central difference along `ẋ`.
pub fn foliation_derivatives(
    m: &MaterialField,
    wave: Wave,
    f: &ScalarField,
    pt: &PhasePoint,
) -> Result<(f64, f64), MaterialError> {
    let (dx, v) = material::hamiltonian_derivs(m, wave, pt)?;
    let hxi = material::ambient_xi_hessian(m, wave, pt)?;
    let h = 1e-5 * (1.0 + pt.x.norm()) / v.norm().max(1e-300);
    let vp = hamilton_map(m, wave, pt.x + v * h, pt.xi)?;
    let vm = hamilton_map(m, wave, pt.x - v * h, pt.xi)?;
    let acc = (vp - vm) * (0.5 / h) + hxi.mul_vec(-dx);
    let grad = f.gradient(pt.x);
    let first = grad.dot(v);
    let second = v.dot(f.hessian(pt.x).mul_vec(v)) + grad.dot(acc);
    Ok((first, second))
}

/// Coefficients `(λ, α)` of `f(X(t)) ≈ f(x) + λt + αt²`, by a least-squares
/// fit to samples of the traced ray at `t = ±k·dt`, `k = 1..4`.
pub fn ray_curvature_fit(
    m: &MaterialField,
    wave: Wave,
    f: &ScalarField,
    pt: &PhasePoint,
    dt: f64,
    opts: &OdeOptions,
) -> Result<(f64, f64), RayError> {
    let mut ts = Vec::with_capacity(9);
    let mut ys = Vec::with_capacity(9);
    let f0 = f.value(pt.x);
    ts.push(0.0);
    ys.push(0.0);
    for k in 1..=4 {
        for sgn in [-1.0, 1.0] {
            let t = sgn * dt * k as f64;
            let q = flow_for_time(m, wave, *pt, t, opts)?;
            ts.push(t);
            ys.push(f.value(q.x) - f0);
        }
    }
    // quartic fit without constant term: columns t, t², t³, t⁴
    let mut ata = [0.0; 16];
    let mut atb = [0.0; 4];
    for (t, y) in ts.iter().zip(&ys) {
        let tn = t / dt;
        let row = [tn, tn * tn, tn.powi(3), tn.powi(4)];
        for i in 0..4 {
            atb[i] += row[i] * y;
            for j in 0..4 {
                ata[4 * i + j] += row[i] * row[j];
            }
        }
    }
    crate::linalg::solve_dense(&mut ata, &mut atb, 4).ok_or(RayError::Integrator { t: 0.0 })?;
    Ok((atb[0] / dt, atb[1] / (dt * dt)))
}

/// `n` unit vectors spanning the tangent plane `Ker df` at `x`, evenly spaced.
pub fn tangent_fan(f: &ScalarField, x: Vec3, n: usize) -> Vec<Vec3> {
    let g = f.gradient(x);
    let gn = g.normalized().unwrap_or(Vec3::axis(2));
    let helper = if gn[0].abs() < 0.9 { Vec3::axis(0) } else { Vec3::axis(1) };
    let e1 = (helper - gn * helper.dot(gn)).normalized().expect("helper is not parallel to the normal");
    let e2 = gn.cross(e1);
    (0..n)
        .map(|k| {
            let a = core::f64::consts::PI * k as f64 / n as f64;
            e1 * a.cos() + e2 * a.sin()
        })
        .collect()
}

/// One tangency probe of [`convexity_scan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexitySample {
    pub x: Vec3,
    /// Covector with `p = 1` whose ray is tangent to the level set at `x`.
    pub xi: Vec3,
    pub velocity: Vec3,
    /// `d²/dt² f(X(t))` at the tangency.
    pub second_derivative: f64,
    /// Second derivative over `|ẋ|²·|∇f|`: an inverse length.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexityReport {
    pub samples: Vec<ConvexitySample>,
    /// Probes where no covector was found or the Hamiltonian failed.
    pub failures: Vec<(Vec3, Vec3)>,
    pub min_normalized: f64,
    pub pass: bool,
}

/// Check `d²/dt² f(X(t)) > 0` at tangency for each `(point, tangent direction)`.
///
/// The direction is projected onto `Ker df`; the tangent covector is taken
/// from the branch reached by Newton seeded with the direction itself, and
/// the remaining stencil seeds are tried if that fails.
pub fn convexity_scan(
    m: &MaterialField,
    wave: Wave,
    f: &ScalarField,
    probes: &[(Vec3, Vec3)],
    tol: f64,
) -> ConvexityReport {
    let mut rep = ConvexityReport { min_normalized: f64::INFINITY, ..Default::default() };
    for &(x, dir) in probes {
        let g = f.gradient(x);
        let v = dir - g * (g.dot(dir) / g.norm_sq());
        let sample = (|| {
            let xi = match invert_hamilton_map(m, wave, x, v, m.g0.mul_vec(v)) {
                Ok(xi) => xi,
                Err(_) => *invert_all(m, wave, x, v).first()?,
            };
            let pt = normalize_covector(m, wave, PhasePoint::new(x, xi)).ok()?;
            let (_, second) = foliation_derivatives(m, wave, f, &pt).ok()?;
            let vel = hamilton_map(m, wave, x, pt.xi).ok()?;
            Some(ConvexitySample {
                x,
                xi: pt.xi,
                velocity: vel,
                second_derivative: second,
                normalized: second / (vel.norm_sq() * g.norm()),
            })
        })();
        match sample {
            Some(s) => {
                rep.min_normalized = rep.min_normalized.min(s.normalized);
                rep.samples.push(s);
            }
            None => rep.failures.push((x, dir)),
        }
    }
    rep.pass = rep.failures.is_empty() && !rep.samples.is_empty() && rep.min_normalized > tol;
    rep
}

/// One covector branch over a tangent vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub xi: Vec3,
    /// Determinant of the half ξ-Hessian, relative to the cube of its largest entry.
    pub det_rel: f64,
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
    /// Invertible differential (relative determinant above tolerance).
    pub nondegenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEntry {
    pub v: Vec3,
    pub branches: Vec<Branch>,
    /// Some branch has an invertible differential.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NondegeneracyReport {
    pub entries: Vec<ProbeEntry>,
    /// `(entry index, branch index)` of branches that are singular or not positive definite.
    pub flagged: Vec<(usize, usize)>,
    pub pass: bool,
}

/// Half ξ-Hessian diagnostics at a phase point.
pub fn branch_at(m: &MaterialField, wave: Wave, pt: &PhasePoint, det_tol: f64) -> Result<Branch, MaterialError> {
    let h = material::xi_hessian(m, wave, pt)?;
    let s = h.max_abs();
    let det_rel = h.det() / (s * s * s);
    let (ev, _) = h.symmetric_eigen();
    Ok(Branch {
        xi: pt.xi,
        det_rel,
        min_eigenvalue: ev[0],
        positive_definite: ev[0] > 0.0,
        nondegenerate: det_rel.abs() > det_tol,
    })
}

/// For each tangent `v`, find all covectors with `H_x(ξ) = v` and check the
/// Hamilton map's differential there.
pub fn nondegeneracy_probe(m: &MaterialField, wave: Wave, x: Vec3, fan: &[Vec3], det_tol: f64) -> NondegeneracyReport {
    let mut rep = NondegeneracyReport::default();
    for (i, &v) in fan.iter().enumerate() {
        let mut branches = Vec::new();
        for xi in invert_all(m, wave, x, v) {
            if let Ok(b) = branch_at(m, wave, &PhasePoint::new(x, xi), det_tol) {
                if !(b.nondegenerate && b.positive_definite) {
                    rep.flagged.push((i, branches.len()));
                }
                branches.push(b);
            }
        }
        let valid = branches.iter().any(|b| b.nondegenerate);
        rep.entries.push(ProbeEntry { v, branches, valid });
    }
    rep.pass = !rep.entries.is_empty() && rep.entries.iter().all(|e| e.valid);
    rep
}

/// Covector directions where the determinant of the ξ-Hessian changes sign.
///
/// Sweeps polar angle from the axis on `n_azimuth` meridians of the tilted
/// frame with `n_polar` samples each, then bisects every sign change.
pub fn triplication_detect(m: &MaterialField, wave: Wave, x: Vec3, n_polar: usize, n_azimuth: usize) -> Vec<Vec3> {
    let mut out = Vec::new();
    let Ok(frame) = m.tilt_frame(x) else {
        return out;
    };
    let mo = m.moduli(x);
    let dir = |th: f64, ph: f64| Vec3([th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
    let det = |th: f64, ph: f64| material::tilted_half_hessian(&mo, wave, dir(th, ph)).ok().map(|h| h.det());
    for a in 0..n_azimuth {
        let ph = 2.0 * core::f64::consts::PI * a as f64 / n_azimuth as f64;
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=n_polar {
            let th = core::f64::consts::PI * k as f64 / n_polar as f64;
            let Some(d) = det(th, ph) else {
                prev = None;
                continue;
            };
            if let Some((tp, dp)) = prev {
                if dp.signum() != d.signum() && dp != 0.0 {
                    let (mut lo, mut hi, mut dlo) = (tp, th, dp);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        match det(mid, ph) {
                            Some(dm) if dm.signum() == dlo.signum() => {
                                lo = mid;
                                dlo = dm;
                            }
                            _ => hi = mid,
                        }
                    }
                    out.push(frame.covector_from_tilted(dir(0.5 * (lo + hi), ph)));
                }
            }
            prev = Some((th, d));
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(h: &Mat3) -> f64 {
    h.symmetric_eigen().0[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::ElasticParams;

    const M0: ElasticParams = ElasticParams::new(14.0, 2.0, 12.0, 4.0, 5.0);

    fn big_box() -> Box3 {
        Box3::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0))
    }

    fn m0() -> MaterialField {
        MaterialField::homogeneous(big_box(), M0, Vec3::new(0.2, 0.1, 1.0))
    }

    #[test]
    fn qsh_rays_are_straight_in_homogeneous_media() {
        let m = m0();
        let start = normalize_covector(&m, Wave::QSH, PhasePoint::new(Vec3::ZERO, Vec3::new(0.3, 0.5, 0.2))).unwrap();
        let ray = integrate_flow(&m, Wave::QSH, start, &[StopSurface::Box(big_box())], &TraceOptions::default()).unwrap();
        let v = hamilton_map(&m, Wave::QSH, Vec3::ZERO, start.xi).unwrap();
        for k in 0..ray.len() {
            assert!((ray.x[k] - v * ray.t[k]).max_abs() < 1e-10);
            assert!((ray.xi[k] - start.xi).max_abs() < 1e-13);
        }
        assert!(ray.end().x.max_abs() > 1.0 - 1e-9);
        assert!(big_box().margin(ray.end().x).abs() < 1e-9);
    }

    #[test]
    fn isotropic_speed_matches_quadratic_identity() {
        let iso = MaterialField::homogeneous(big_box(), ElasticParams::isotropic(2.0, 1.0), Vec3::axis(2));
        let start = normalize_covector(&iso, Wave::QP, PhasePoint::new(Vec3::ZERO, Vec3::new(1.0, 2.0, -0.5))).unwrap();
        let ray = integrate_flow(&iso, Wave::QP, start, &[StopSurface::Box(big_box())], &TraceOptions::default()).unwrap();
        for k in 1..ray.len() {
            let speed = (ray.x[k] - ray.x[k - 1]).norm() / (ray.t[k] - ray.t[k - 1]);
            // p = 2(λ+2μ)|ξ|², so ẋ = 4(λ+2μ)ξ and |ẋ|² = 8(λ+2μ)·p
            assert!((speed - 16.0 * start.xi.norm()).abs() < 1e-9);
            assert!((speed - 32f64.sqrt()).abs() < 1e-9);
        }
    }

    fn bumped() -> MaterialField {
        let bump = ScalarField::Gaussian { amplitude: 0.5, center: Vec3::new(0.1, 0.0, 0.0), widths: Vec3::new(0.3, 0.3, 0.3) };
        m0().with_e2_coupling().unwrap().perturbed(crate::Param::A11, bump)
    }

    #[test]
    fn conservation_in_heterogeneous_medium() {
        let m = bumped();
        let start = normalize_covector(&m, Wave::QP, PhasePoint::new(Vec3::new(-0.9, 0.0, 0.05), Vec3::new(1.0, 0.1, 0.0))).unwrap();
        let ray = integrate_flow(&m, Wave::QP, start, &[StopSurface::Box(big_box())], &TraceOptions::default()).unwrap();
        assert!(ray.drift < 1e-8);
        assert!((ray.xi[ray.len() - 1] - start.xi).norm() > 1e-4);
    }

    #[test]
    fn time_reversal_recovers_entry() {
        let m = bumped();
        for w in [Wave::QP, Wave::QSV] {
            let start = normalize_covector(&m, w, PhasePoint::new(Vec3::new(-1.0, 0.2, -0.1), Vec3::new(1.0, -0.2, 0.3))).unwrap();
            let stops = [StopSurface::Box(big_box())];
            let rec = lens_record(&m, w, start, &stops, &TraceOptions::default()).unwrap();
            let back = lens_record(&m, w, PhasePoint::new(rec.exit.x, -rec.exit.xi), &stops, &TraceOptions::default()).unwrap();
            assert!((back.exit.x - start.x).max_abs() < 1e-8, "{w}");
            assert!((back.exit.xi + start.xi).max_abs() < 1e-8);
            assert!((back.tau - rec.tau).abs() < 1e-8);
        }
    }

    #[test]
    fn hamilton_map_round_trips() {
        let m = m0();
        let x = Vec3::new(0.1, 0.2, 0.3);
        for w in [Wave::QP, Wave::QSV, Wave::QSH] {
            for v in stencil26() {
                let all = invert_all(&m, w, x, v * 2.5);
                assert!(!all.is_empty(), "{w} {v:?}");
                for xi in all {
                    let back = hamilton_map(&m, w, x, xi).unwrap();
                    assert!((back - v * 2.5).norm() < 1e-9 * 2.5, "{w} {v:?}");
                }
            }
            if w != Wave::QSV {
                for v in stencil26() {
                    assert!(invert_hamilton_map(&m, w, x, v, m.g0.mul_vec(v)).is_ok());
                }
            }
        }
    }

    #[test]
    fn tangent_velocity_inverts_to_zero_axial_component() {
        let m = MaterialField::homogeneous(big_box(), M0, Vec3::axis(2));
        let x = Vec3::ZERO;
        for v in tangent_fan(&m.layer, x, 12) {
            let xi = invert_hamilton_map(&m, Wave::QP, x, v, v).unwrap();
            assert!(xi[2].abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_jacobian_of_flow() {
        let m = bumped();
        let start = normalize_covector(&m, Wave::QP, PhasePoint::new(Vec3::new(-0.5, 0.0, 0.0), Vec3::new(1.0, 0.2, 0.1))).unwrap();
        let opts = OdeOptions::default().with_tolerance(1e-12, 1e-14);
        let (end, jac) = flow_with_jacobian(&m, Wave::QP, start, 0.1, &opts).unwrap();
        let plain = flow_for_time(&m, Wave::QP, start, 0.1, &opts).unwrap();
        assert!((end.x - plain.x).max_abs() < 1e-10);
        let h = 1e-6;
        for k in 0..6 {
            let mut a = pack(&start);
            let mut b = a;
            a[k] += h;
            b[k] -= h;
            let za = pack(&flow_for_time(&m, Wave::QP, unpack(&a), 0.1, &opts).unwrap());
            let zb = pack(&flow_for_time(&m, Wave::QP, unpack(&b), 0.1, &opts).unwrap());
            for i in 0..6 {
                let fd = (za[i] - zb[i]) / (2.0 * h);
                assert!((fd - jac[i][k]).abs() < 1e-5 * (1.0 + fd.abs()), "({i},{k}) {fd} {}", jac[i][k]);
            }
        }
    }

    #[test]
    fn spherical_foliation_is_convex_and_plane_is_not() {
        let m = m0();
        let center = Vec3::new(0.0, 0.0, -5.0);
        let sphere = ScalarField::Radial { center, sign: 1.0, offset: -5.0 };
        let x = Vec3::new(0.1, 0.0, 0.0);
        let probes: Vec<_> = tangent_fan(&sphere, x, 8).into_iter().map(|v| (x, v)).collect();
        for w in [Wave::QP, Wave::QSV, Wave::QSH] {
            let rep = convexity_scan(&m, w, &sphere, &probes, 1e-8);
            assert!(rep.pass, "{w} {rep:?}");
        }
        let plane = ScalarField::Linear { coef: Vec3::axis(2), offset: 0.0 };
        let rep = convexity_scan(&m, Wave::QP, &plane, &probes, 1e-8);
        assert!(!rep.pass);
        assert!(rep.min_normalized.abs() < 1e-9);
    }

    #[test]
    fn curvature_fit_matches_analytic_second_derivative() {
        let m = bumped();
        let sphere = ScalarField::Radial { center: Vec3::new(0.0, 0.0, -5.0), sign: 1.0, offset: -5.0 };
        let x = Vec3::new(0.05, 0.0, 0.0);
        let v = tangent_fan(&sphere, x, 3)[1];
        let xi = invert_hamilton_map(&m, Wave::QP, x, v, v).unwrap();
        let pt = normalize_covector(&m, Wave::QP, PhasePoint::new(x, xi)).unwrap();
        let (d1, d2) = foliation_derivatives(&m, Wave::QP, &sphere, &pt).unwrap();
        assert!(d1.abs() < 1e-10);
        let opts = OdeOptions::default().with_tolerance(1e-13, 1e-15);
        // the fit's truncation error falls like dt⁴
        let (lam, alpha) = ray_curvature_fit(&m, Wave::QP, &sphere, &pt, 5e-4, &opts).unwrap();
        assert!(lam.abs() < 1e-8, "{lam} {alpha} {d2}");
        assert!((2.0 * alpha - d2).abs() < 1e-6 * d2.abs(), "{alpha} {d2}");
    }

    #[test]
    fn nondegeneracy_examples() {
        let m = MaterialField::homogeneous(big_box(), M0, Vec3::axis(2));
        let fan = tangent_fan(&m.layer, Vec3::ZERO, 12);
        assert!(nondegeneracy_probe(&m, Wave::QSV, Vec3::ZERO, &fan, 1e-8).pass);
        assert!(nondegeneracy_probe(&m, Wave::QP, Vec3::ZERO, &fan, 1e-8).pass);
        // (a13+a55)² = 144 > a33(a11−a55) = 120
        let tuned = MaterialField::homogeneous(big_box(), ElasticParams::new(14.0, 8.0, 12.0, 4.0, 5.0), Vec3::axis(2));
        let rep = nondegeneracy_probe(&tuned, Wave::QSV, Vec3::ZERO, &fan, 1e-8);
        assert!(!rep.flagged.is_empty());
    }

    #[test]
    fn triplication_examples() {
        let m = m0();
        assert!(triplication_detect(&m, Wave::QSH, Vec3::ZERO, 90, 8).is_empty());
        assert!(triplication_detect(&m, Wave::QP, Vec3::ZERO, 90, 8).is_empty());
        let tuned = MaterialField::homogeneous(big_box(), ElasticParams::new(14.0, 8.0, 12.0, 4.0, 5.0), Vec3::axis(2));
        assert!(!triplication_detect(&tuned, Wave::QSV, Vec3::ZERO, 90, 8).is_empty());
    }
}
